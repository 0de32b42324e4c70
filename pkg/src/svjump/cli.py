"""Batch front-end: panel ingestion with screening, and the
simulate / fit / forecast / bf / diagnose subcommands.

Every subcommand reads one flat key=value config file (UTF-8, ``#``
comments), applies ``-o key=value`` overrides, and writes its artifacts
into a run directory together with a config snapshot and a log, so any
run can be reproduced byte-for-byte from the snapshot alone.  Exit
codes: 2 for configuration problems, 3 for data problems, 4 for
numerical failures.
"""

import logging
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd

from . import forecast as fc
from .estimators import FORECAST_SALT
from .mcmc import (
    ChainError,
    CheckpointError,
    McmcConfig,
    effective_sample_size,
    run_chain,
)
from .model import FactorParams, PriorSpec, ReturnsPanel, StockParams
from .simulate import deltas_from_dates, simulate_panel, write_panel_csv

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

FLOAT_FMT = "%.17g"


class ConfigError(Exception):
    """Bad or missing configuration."""


class DataError(Exception):
    """Unusable input data or inconsistent run artifacts."""


# ---------------------------------------------------------------------------
# panel ingestion


def _max_zero_run(x: np.ndarray) -> int:
    run = best = 0
    for v in x:
        run = run + 1 if v == 0.0 else 0
        best = max(best, run)
    return best


def ingest_panel(path, min_days: int = 1000, max_flat: int = 10):
    """Load a returns CSV (date column plus one numeric column per stock)
    into a validated panel.

    Stocks with fewer than ``min_days`` observations, or with a stretch
    of ``max_flat`` or more consecutive zero returns (an unchanged price
    over more than ``max_flat`` days), are dropped; the second return
    value lists every dropped stock with its reason.  Rows that fail to
    parse are reported with their CSV line number.  Surviving stocks
    must be observed on every date.
    """
    try:
        raw = pd.read_csv(path, dtype=str, skipinitialspace=True)
    except FileNotFoundError:
        raise DataError(f"no such data file: {path}")
    except Exception as exc:
        raise DataError(f"unreadable CSV {path}: {exc}")
    cols = [str(c).strip() for c in raw.columns]
    raw.columns = cols
    if "date" not in cols:
        raise DataError("the panel CSV needs a 'date' column")
    stock_names = [c for c in cols if c != "date"]
    if not stock_names:
        raise DataError("the panel CSV has no stock columns")

    dates = pd.to_datetime(raw["date"], format="%Y-%m-%d", errors="coerce")
    bad = np.flatnonzero(dates.isna().to_numpy())
    if bad.size:
        raise DataError(
            f"line {bad[0] + 2}: unparseable ISO date "
            f"{raw['date'].iloc[bad[0]]!r}")
    dvals = dates.to_numpy().astype("datetime64[D]")
    dup = pd.Index(dvals).duplicated()
    if dup.any():
        j = int(np.flatnonzero(dup)[0])
        raise DataError(f"line {j + 2}: duplicate date {dvals[j]}")
    if dvals.size > 1:
        gaps = np.diff(dvals).astype(int)
        if np.any(gaps <= 0):
            j = int(np.flatnonzero(gaps <= 0)[0]) + 1
            raise DataError(f"line {j + 2}: dates are not increasing "
                            f"({dvals[j]} after {dvals[j - 1]})")

    values = {}
    missing = {}
    for name in stock_names:
        col = raw[name]
        empty = col.isna() | (col.str.strip() == "")
        num = pd.to_numeric(col.where(~empty), errors="coerce")
        garbled = np.flatnonzero((num.isna() & ~empty).to_numpy())
        if garbled.size:
            raise DataError(
                f"line {garbled[0] + 2}: column {name!r} holds "
                f"{col.iloc[garbled[0]]!r}, not a return")
        values[name] = num.to_numpy(dtype=float)
        missing[name] = empty.to_numpy()

    report = []
    kept = []
    for name in stock_names:
        obs = values[name][~missing[name]]
        if obs.size < min_days:
            report.append((name, "short_history",
                           f"{obs.size} observed days < {min_days}"))
            continue
        flat = _max_zero_run(obs)
        if flat >= max_flat:
            report.append((name, "flat_run",
                           f"{flat} consecutive zero returns"))
            continue
        kept.append(name)
    if not kept:
        raise DataError("no stock survives screening")

    for name in kept:
        holes = np.flatnonzero(missing[name])
        if holes.size:
            raise DataError(
                f"line {holes[0] + 2}: stock {name!r} passes screening but "
                f"is missing on {dvals[holes[0]]}")

    panel = ReturnsPanel(values=np.vstack([values[n] for n in kept]),
                         deltas=np.tile(deltas_from_dates(dvals),
                                        (len(kept), 1)),
                         dates=dvals, names=kept)
    return panel, report


# ---------------------------------------------------------------------------
# flat key=value configs

REQUIRED = object()

COMMON_KEYS = {
    "out_dir": ("str", REQUIRED),
    "seed": ("int", 0),
    "workers": ("int", 1),
}

PRIOR_KEYS = {
    "delta": ("float", 1.0),
    "c": ("float", 50.0),
    "w_var": ("float", 0.5),
    "b_mean": ("float", -5.0),
    "b_var": ("float", 1.0),
    "lambda_star": ("float", 0.15),
    "mu_mean": ("float", 0.0),
    "mu_var": ("float", 10.0),
    "phi_beta_a": ("float", 20.0),
    "phi_beta_b": ("float", 1.5),
    "sigma2_eta_shape": ("float", 0.5),
    "sigma2_eta_rate": ("float", 0.5),
}

KEY_SETS = {
    "simulate": {
        **COMMON_KEYS,
        "variant": ("str", REQUIRED),
        "n_stocks": ("int", REQUIRED),
        "n_times": ("int", REQUIRED),
        "n_factors": ("int", 0),
        "start_date": ("str", "2015-01-05"),
        "mu": ("float", -0.9),
        "phi": ("float", 0.95),
        "sigma2_eta": ("float", 0.05),
        "mu_xi": ("float", -2.5),
        "sigma2_xi": ("float", 8.0),
        "b": ("float", -5.0),
        "loadings": ("floats", ()),
        "alpha": ("floats", ()),
        "lambda_star": ("float", 0.15),
        "intensity_shape": ("float", 1.0),
        "intensity_rate": ("float", 50.0),
    },
    "fit": {
        **COMMON_KEYS,
        **PRIOR_KEYS,
        "data": ("str", REQUIRED),
        "variant": ("str", REQUIRED),
        "n_factors": ("int", 0),
        "iterations": ("int", REQUIRED),
        "burn_in": ("int", REQUIRED),
        "thin": ("int", 1),
        "path_stride": ("int", 10),
        "use_asis": ("bool", True),
        "min_days": ("int", 1000),
        "max_flat": ("int", 10),
    },
    "forecast": {
        **COMMON_KEYS,
        "fit_dir": ("str", REQUIRED),
        "data": ("str", REQUIRED),
        "n_particles": ("int", 1000),
        "bridge_sweeps": ("int", 5),
        "calibration_sweeps": ("int", 200),
        "horizon": ("int", 0),
    },
    "bf": {
        **COMMON_KEYS,
        "numer": ("str", REQUIRED),
        "denom": ("str", REQUIRED),
        "label_numer": ("str", "model_a"),
        "label_denom": ("str", "model_b"),
        "per_stock": ("bool", False),
    },
    "diagnose": {
        **COMMON_KEYS,
        "fit_dir": ("str", REQUIRED),
        "jump_threshold": ("float", 0.5),
    },
}


def _parse_kv_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value, "
                              f"got {raw_line.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in out:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _convert(key: str, kind: str, raw: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if kind == "floats":
            return tuple(float(tok) for tok in raw.split(",") if tok.strip())
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot read {raw!r} "
                          f"as {kind}")


def load_config(command: str, path, overrides=()) -> dict:
    """Parse, merge, and type a subcommand's config; misspelled or alien
    keys are rejected rather than silently ignored."""
    spec = KEY_SETS[command]
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    raw = _parse_kv_text(text)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, value = item.partition("=")
        raw[key.strip()] = value.strip()
    unknown = sorted(set(raw) - set(spec))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: "
                          + ", ".join(unknown))
    cfg = {}
    for key, (kind, default) in spec.items():
        if key in raw:
            cfg[key] = _convert(key, kind, raw[key])
        elif default is REQUIRED:
            raise ConfigError(f"missing required config key {key!r}")
        else:
            cfg[key] = default
    return cfg


def _snapshot_config(cfg: dict, run_dir: Path) -> None:
    lines = []
    for key in sorted(cfg):
        val = cfg[key]
        if isinstance(val, tuple):
            val = ",".join(FLOAT_FMT % v for v in val)
        elif isinstance(val, bool):
            val = "true" if val else "false"
        elif isinstance(val, float):
            val = FLOAT_FMT % val
        lines.append(f"{key} = {val}")
    (run_dir / "config.snapshot").write_text("\n".join(lines) + "\n",
                                             encoding="utf-8")


def _open_run_dir(cfg: dict) -> tuple[Path, logging.Logger]:
    run_dir = Path(cfg["out_dir"])
    run_dir.mkdir(parents=True, exist_ok=True)
    _snapshot_config(cfg, run_dir)
    logger = logging.getLogger(f"svjump.run.{id(cfg)}")
    logger.setLevel(logging.INFO)
    logger.handlers.clear()
    handler = logging.FileHandler(run_dir / "run.log", mode="w",
                                  encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(message)s"))
    logger.addHandler(handler)
    logger.propagate = False
    return run_dir, logger


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FMT)


# ---------------------------------------------------------------------------
# subcommand bodies


def _cmd_simulate(cfg: dict, run_dir: Path, log: logging.Logger) -> None:
    p, T, K = cfg["n_stocks"], cfg["n_times"], cfg["n_factors"]
    if cfg["variant"] == "svj_factor":
        if K < 1:
            raise ConfigError("factor variant needs n_factors >= 1")
        alpha = cfg["alpha"] or (0.8,) * K
        loadings = cfg["loadings"] or (1.0,) * K
        if len(alpha) != K or len(loadings) != K:
            raise ConfigError("alpha and loadings must list one value "
                              "per factor")
        factor_params = FactorParams(alpha=np.array(alpha),
                                     lambda_star=cfg["lambda_star"])
        w = np.array(loadings)
    else:
        factor_params = None
        w = np.zeros(0)
    stock_params = [StockParams(mu=cfg["mu"], phi=cfg["phi"],
                                sigma2_eta=cfg["sigma2_eta"],
                                mu_xi=cfg["mu_xi"], sigma2_xi=cfg["sigma2_xi"],
                                b=cfg["b"], w=w.copy())
                    for _ in range(p)]
    from .simulate import business_day_calendar
    dates = business_day_calendar(T, cfg["start_date"])
    panel, latent = simulate_panel(stock_params, cfg["variant"], T,
                                   factor_params=factor_params,
                                   seed=cfg["seed"], dates=dates,
                                   intensity_shape=cfg["intensity_shape"],
                                   intensity_rate=cfg["intensity_rate"])
    write_panel_csv(panel, run_dir / "panel.csv")
    iso = pd.DatetimeIndex(dates).strftime("%Y-%m-%d")

    counts = pd.DataFrame(latent.n.T, columns=panel.names)
    counts.insert(0, "date", iso)
    vols = pd.DataFrame(latent.h[:, 1:].T, columns=panel.names)
    vols.insert(0, "date", iso)
    _write_csv(counts, run_dir / "latent_counts.csv")
    _write_csv(vols, run_dir / "latent_volatility.csv")
    if cfg["variant"] == "svj_factor":
        facs = pd.DataFrame(latent.f[:, 1:].T,
                            columns=[f"factor{k + 1}" for k in range(K)])
        facs.insert(0, "date", iso)
        _write_csv(facs, run_dir / "latent_factors.csv")

    rows = []
    for i, (name, sp) in enumerate(zip(panel.names, stock_params)):
        row = {"stock": name, "mu": sp.mu, "phi": sp.phi,
               "sigma2_eta": sp.sigma2_eta, "mu_xi": sp.mu_xi,
               "sigma2_xi": sp.sigma2_xi, "b": sp.b}
        for k in range(w.size):
            row[f"w{k + 1}"] = w[k]
        rows.append(row)
    _write_csv(pd.DataFrame(rows), run_dir / "true_params.csv")
    log.info("simulated %d stocks x %d days (%s)", p, T, cfg["variant"])


def _prior_from_cfg(cfg: dict, panel: ReturnsPanel) -> PriorSpec:
    return PriorSpec.from_ranges(
        panel.ranges(), delta=cfg["delta"], c=cfg["c"], w_var=cfg["w_var"],
        b_mean=cfg["b_mean"], b_var=cfg["b_var"],
        lambda_star=cfg["lambda_star"], mu_mean=cfg["mu_mean"],
        mu_var=cfg["mu_var"], phi_beta_a=cfg["phi_beta_a"],
        phi_beta_b=cfg["phi_beta_b"],
        sigma2_eta_shape=cfg["sigma2_eta_shape"],
        sigma2_eta_rate=cfg["sigma2_eta_rate"])


def _draws_long_frame(draws, names: list[str]) -> pd.DataFrame:
    config = draws.config
    D = draws.n_retained
    iters = config.burn_in + 1 + config.thin * np.arange(D)
    blocks = {"mu": draws.mu, "phi": draws.phi,
              "sigma2_eta": draws.sigma2_eta}
    if config.variant != "sv":
        blocks.update({"mu_xi": draws.mu_xi, "sigma2_xi": draws.sigma2_xi})
    if config.variant == "svj_factor":
        blocks["b"] = draws.b
        for k in range(config.n_factors):
            blocks[f"w{k + 1}"] = draws.w[:, :, k]
    frames = []
    for param, chain in blocks.items():
        for i, name in enumerate(names):
            frames.append(pd.DataFrame({
                "iteration": iters, "stock": name, "parameter": param,
                "value": chain[:, i]}))
    if config.variant == "svj_factor":
        for k in range(config.n_factors):
            frames.append(pd.DataFrame({
                "iteration": iters, "stock": "",
                "parameter": f"alpha{k + 1}", "value": draws.alpha[:, k]}))
    frames.append(pd.DataFrame({
        "iteration": iters, "stock": "", "parameter": "loglik",
        "value": draws.loglik}))
    return pd.concat(frames, ignore_index=True)


def _cmd_fit(cfg: dict, run_dir: Path, log: logging.Logger) -> None:
    panel, report = ingest_panel(cfg["data"], cfg["min_days"],
                                 cfg["max_flat"])
    _write_csv(pd.DataFrame(report, columns=["stock", "reason", "detail"]),
               run_dir / "screening.csv")
    for name, reason, detail in report:
        log.info("dropped %s: %s (%s)", name, reason, detail)
    log.info("fitting %d stocks x %d days (%s)", panel.n_stocks,
             panel.n_times, cfg["variant"])

    prior = _prior_from_cfg(cfg, panel)
    config = McmcConfig(iterations=cfg["iterations"], burn_in=cfg["burn_in"],
                        thin=cfg["thin"], variant=cfg["variant"],
                        n_factors=cfg["n_factors"], seed=cfg["seed"],
                        workers=cfg["workers"],
                        path_stride=cfg["path_stride"],
                        use_asis=cfg["use_asis"])
    draws = run_chain(panel, prior, config)

    _write_csv(_draws_long_frame(draws, panel.names), run_dir / "draws.csv")

    rows = []
    for name, sp in zip(panel.names, draws.posterior_mean_params()):
        row = {"stock": name, "mu": sp.mu, "phi": sp.phi,
               "sigma2_eta": sp.sigma2_eta, "mu_xi": sp.mu_xi,
               "sigma2_xi": sp.sigma2_xi, "b": sp.b}
        for k in range(config.n_factors):
            row[f"w{k + 1}"] = sp.w[k]
        rows.append(row)
    _write_csv(pd.DataFrame(rows), run_dir / "posterior_means.csv")
    if config.variant == "svj_factor":
        _write_csv(pd.DataFrame({
            "factor": np.arange(1, config.n_factors + 1),
            "alpha": draws.alpha.mean(axis=0),
            "lambda_star": prior.lambda_star}),
            run_dir / "factor_params.csv")

    np.savez_compressed(
        run_dir / "posterior.npz",
        variant=config.variant, n_factors=config.n_factors,
        names=np.array(panel.names), values=panel.values,
        deltas=panel.deltas, dates=panel.dates.astype("datetime64[D]"),
        h_last=draws.h_last, h_paths=draws.h_paths, f_paths=draws.f_paths,
        n_paths=draws.n_paths, jump_prob=draws.jump_prob,
        n_mean=draws.n_mean, lam_mean=draws.lam_mean,
        intensity_shape=prior.delta, intensity_rate=prior.c)
    log.info("retained %d draws", draws.n_retained)


def _load_fit_dir(fit_dir: str):
    root = Path(fit_dir)
    npz_path = root / "posterior.npz"
    means_path = root / "posterior_means.csv"
    if not npz_path.exists() or not means_path.exists():
        raise DataError(f"{fit_dir} is not a fit run directory "
                        "(missing posterior.npz / posterior_means.csv)")
    try:
        store = np.load(npz_path, allow_pickle=False)
    except Exception as exc:
        raise DataError(f"unreadable posterior store: {exc}")
    means = pd.read_csv(means_path, float_precision="round_trip")
    variant = str(store["variant"])
    n_factors = int(store["n_factors"])
    names = [str(n) for n in store["names"]]
    if list(means["stock"].astype(str)) != names:
        raise DataError("posterior_means.csv does not list the fitted "
                        "stocks in order")
    stock_params = []
    for _, row in means.iterrows():
        w = np.array([row[f"w{k + 1}"] for k in range(n_factors)])
        stock_params.append(StockParams(
            mu=row["mu"], phi=row["phi"], sigma2_eta=row["sigma2_eta"],
            mu_xi=row["mu_xi"], sigma2_xi=row["sigma2_xi"],
            b=row["b"], w=w))
    factor_params = None
    if variant == "svj_factor":
        fp_frame = pd.read_csv(root / "factor_params.csv",
                               float_precision="round_trip")
        factor_params = FactorParams(
            alpha=fp_frame["alpha"].to_numpy(),
            lambda_star=float(fp_frame["lambda_star"].iloc[0]))
    return store, variant, n_factors, names, stock_params, factor_params


def _cmd_forecast(cfg: dict, run_dir: Path, log: logging.Logger) -> None:
    store, variant, _, names, stock_params, factor_params = \
        _load_fit_dir(cfg["fit_dir"])
    out_panel, _ = ingest_panel(cfg["data"], min_days=0, max_flat=10 ** 9)
    missing = [n for n in names if n not in out_panel.names]
    if missing:
        raise DataError("out-of-sample data lacks fitted stocks: "
                        + ", ".join(missing))
    extra = [n for n in out_panel.names if n not in names]
    if extra:
        raise DataError("out-of-sample data has unknown stocks: "
                        + ", ".join(extra))
    order = [out_panel.names.index(n) for n in names]
    out_values = out_panel.values[order]
    out_dates = out_panel.dates

    last_fit = store["dates"][-1]
    if out_dates[0] <= last_fit:
        raise DataError(f"out-of-sample data starts {out_dates[0]}, "
                        f"on or before the fitted window's end {last_fit}")
    gaps = deltas_from_dates(np.concatenate([[last_fit], out_dates]))[1:]
    out_deltas = np.tile(gaps, (len(names), 1))

    horizon = cfg["horizon"]
    if horizon > 0:
        if horizon > out_values.shape[1]:
            raise DataError(f"horizon {horizon} exceeds the "
                            f"{out_values.shape[1]} supplied steps")
        out_values = out_values[:, :horizon]
        out_deltas = out_deltas[:, :horizon]
        out_dates = out_dates[:horizon]
    steps = out_values.shape[1]
    log.info("scoring %d out-of-sample steps (%s)", steps, variant)

    seed_key = [cfg["seed"], FORECAST_SALT]
    if variant == "svj_factor":
        ens = fc.ais_forecast(
            store["h_paths"], store["f_paths"], store["n_paths"],
            store["values"], store["deltas"], stock_params, factor_params,
            out_values, out_deltas, n_trajectories=cfg["n_particles"],
            bridge_sweeps=cfg["bridge_sweeps"], seed=seed_key,
            workers=cfg["workers"],
            calibration_sweeps=cfg["calibration_sweeps"])
        per_stock = ens.per_stock_curve()
        panel_curve = ens.product_curve()
        global_curve = ens.global_curve()
    else:
        children = np.random.SeedSequence(seed_key).spawn(len(names))
        pf_variant = "sv" if variant == "sv" else "svj_independent"
        inc = np.empty((len(names), steps))
        for i in range(len(names)):
            inc[i] = fc.particle_filter(
                store["h_last"][:, i], stock_params[i], out_values[i],
                out_deltas[i], n_particles=cfg["n_particles"],
                rng=np.random.default_rng(children[i]), variant=pf_variant,
                intensity_shape=float(store["intensity_shape"]),
                intensity_rate=float(store["intensity_rate"]))
        per_stock = np.cumsum(inc, axis=1).T
        panel_curve = per_stock.sum(axis=1)
        global_curve = None

    frame = pd.DataFrame({
        "step": np.arange(1, steps + 1),
        "date": pd.DatetimeIndex(out_dates).strftime("%Y-%m-%d"),
        "logml_panel": panel_curve,
    })
    if global_curve is not None:
        frame["logml_joint"] = global_curve
    for i, name in enumerate(names):
        frame[f"logml_{name}"] = per_stock[:, i]
    _write_csv(frame, run_dir / "logml.csv")


def _read_logml(path_key: str, path: str) -> pd.DataFrame:
    p = Path(path)
    if p.is_dir():
        p = p / "logml.csv"
    if not p.exists():
        raise DataError(f"{path_key}: no log marginal table at {p}")
    frame = pd.read_csv(p, float_precision="round_trip")
    if "logml_panel" not in frame.columns:
        raise DataError(f"{path_key}: {p} is not a forecast output")
    return frame


def _cmd_bf(cfg: dict, run_dir: Path, log: logging.Logger) -> None:
    numer = _read_logml("numer", cfg["numer"])
    denom = _read_logml("denom", cfg["denom"])
    if len(numer) != len(denom):
        raise DataError("the two forecasts cover different step counts")
    if list(numer["date"]) != list(denom["date"]):
        raise DataError("the two forecasts cover different dates")
    inc_n = np.diff(numer["logml_panel"].to_numpy(), prepend=0.0)
    inc_d = np.diff(denom["logml_panel"].to_numpy(), prepend=0.0)

    kwargs = {}
    if cfg["per_stock"]:
        stocks_n = [c[len("logml_"):] for c in numer.columns
                    if c.startswith("logml_") and c not in
                    ("logml_panel", "logml_joint")]
        stocks_d = [c[len("logml_"):] for c in denom.columns
                    if c.startswith("logml_") and c not in
                    ("logml_panel", "logml_joint")]
        if stocks_n != stocks_d:
            raise DataError("per-stock columns differ between the two "
                            "forecasts")
        kwargs = {
            "per_stock_numer": numer[[f"logml_{s}" for s in stocks_n]]
            .to_numpy(),
            "per_stock_denom": denom[[f"logml_{s}" for s in stocks_n]]
            .to_numpy(),
            "stock_names": stocks_n,
        }
    fc.write_bayes_factor_csv(
        run_dir / "bayes_factors.csv", list(numer["date"]), inc_n, inc_d,
        labels=(cfg["label_numer"], cfg["label_denom"]), **kwargs)
    log.info("bayes factors over %d steps", len(numer))


WEEKDAY_NAMES = ["Monday", "Tuesday", "Wednesday", "Thursday", "Friday",
                 "Saturday", "Sunday"]


def _cmd_diagnose(cfg: dict, run_dir: Path, log: logging.Logger) -> None:
    fit_dir = Path(cfg["fit_dir"])
    store, variant, n_factors, names, _, _ = _load_fit_dir(cfg["fit_dir"])
    draws_path = fit_dir / "draws.csv"
    if not draws_path.exists():
        raise DataError(f"{fit_dir} has no draws.csv")
    draws = pd.read_csv(draws_path, float_precision="round_trip",
                        keep_default_na=False)

    rows = []
    for (param, stock), group in draws.groupby(["parameter", "stock"],
                                               sort=True):
        chain = group.sort_values("iteration")["value"].to_numpy()
        try:
            ess = float(effective_sample_size(chain))
        except ValueError as exc:
            raise DataError(f"cannot size the {param}/{stock} chain: {exc}")
        rows.append({"parameter": param, "stock": stock, "ess": ess,
                     "n_draws": chain.size})
    _write_csv(pd.DataFrame(rows), run_dir / "ess.csv")

    dates = pd.DatetimeIndex(store["dates"])
    iso = dates.strftime("%Y-%m-%d")
    probs = store["jump_prob"]
    n_mean = store["n_mean"]
    deltas = store["deltas"]

    wk_rows = []
    weekday = dates.weekday
    for day in range(7):
        mask = weekday == day
        if not mask.any():
            continue
        wk_rows.append({
            "weekday": WEEKDAY_NAMES[day],
            "n_cells": int(mask.sum()) * len(names),
            "mean_delta": deltas[:, mask].mean(),
            "mean_jump_probability": probs[:, mask].mean(),
            "expected_jumps_per_cell": n_mean[:, mask].mean(),
        })
    _write_csv(pd.DataFrame(wk_rows), run_dir / "weekday_jumps.csv")

    thr = cfg["jump_threshold"]
    prob_frame = pd.DataFrame(probs, columns=iso)
    prob_frame.insert(0, "stock", names)
    flag_frame = pd.DataFrame((probs > thr).astype(int), columns=iso)
    flag_frame.insert(0, "stock", names)
    _write_csv(prob_frame, run_dir / "jump_probabilities.csv")
    _write_csv(flag_frame, run_dir / "jump_indicators.csv")
    log.info("diagnostics for %d stocks (%s), threshold %s",
             len(names), variant, thr)


# ---------------------------------------------------------------------------
# click wiring

COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "forecast": _cmd_forecast,
    "bf": _cmd_bf,
    "diagnose": _cmd_diagnose,
}


def run_command(command: str, config_path, overrides=()) -> int:
    """Execute one subcommand; returns the process exit code."""
    try:
        cfg = load_config(command, config_path, overrides)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    try:
        run_dir, log = _open_run_dir(cfg)
    except OSError as exc:
        click.echo(f"config error: cannot create run directory: {exc}",
                   err=True)
        return EXIT_CONFIG
    try:
        COMMANDS[command](cfg, run_dir, log)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    except DataError as exc:
        log.error("data error: %s", exc)
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    except (fc.ForecastError, ChainError, CheckpointError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        click.echo(f"numerical failure: {exc}", err=True)
        return EXIT_NUMERICAL
    return 0


def _subcommand(name: str, help_text: str):
    @click.command(name=name, help=help_text)
    @click.option("--config", "-c", "config_path", required=True,
                  type=click.Path(), help="flat key=value config file")
    @click.option("--override", "-o", "overrides", multiple=True,
                  metavar="KEY=VALUE", help="override a config key")
    def cmd(config_path, overrides):
        code = run_command(name, config_path, overrides)
        if code:
            sys.exit(code)
    return cmd


@click.group()
def main():
    """Panel stochastic-volatility toolkit: simulation, posterior
    sampling, out-of-sample scoring, and diagnostics."""


main.add_command(_subcommand(
    "simulate", "Draw a synthetic panel and its latent ground truth."))
main.add_command(_subcommand(
    "fit", "Ingest a returns CSV and run the posterior sampler."))
main.add_command(_subcommand(
    "forecast", "Score out-of-sample returns from a fit directory."))
main.add_command(_subcommand(
    "bf", "Assemble predictive Bayes factors from two forecast runs."))
main.add_command(_subcommand(
    "diagnose", "ESS, weekday jump table, and jump-probability matrices."))


if __name__ == "__main__":
    main()
