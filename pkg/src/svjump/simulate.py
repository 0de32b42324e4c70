"""Forward simulation of return panels and the robust outlier screen.

Generators cover all three variants (plain stochastic volatility,
volatility with independently drawn jump intensities, volatility with
factor-driven intensities) and hand back the full latent ground truth
for recovery tests.  The outlier screen flags returns more than three
robust standard deviations from the median.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.signal import lfilter
from statsmodels.robust.scale import qn_scale

from .model import FactorParams, LatentState, ReturnsPanel, StockParams, \
    intensity_from_factors

VARIANTS = ("sv", "svj_independent", "svj_factor")


def business_day_calendar(T: int, start: str = "2015-01-05") -> np.ndarray:
    """T consecutive weekdays, starting at ``start`` (rolled forward if it
    falls on a weekend)."""
    if T < 1:
        raise ValueError("need at least one date")
    return np.busday_offset(np.datetime64(start, "D"), np.arange(T),
                            roll="forward").astype("datetime64[D]")


def deltas_from_dates(dates: np.ndarray) -> np.ndarray:
    """Calendar-day gaps; the opening observation gets gap 1."""
    dates = np.asarray(dates, dtype="datetime64[D]")
    out = np.ones(dates.size)
    out[1:] = np.diff(dates).astype(float)
    if np.any(out <= 0):
        raise ValueError("dates must be strictly increasing")
    return out


def _stationary_ar1_path(rng: np.random.Generator, level: float, phi: float,
                         sigma2: float, T: int) -> np.ndarray:
    sd = math.sqrt(sigma2)
    e = np.empty(T + 1)
    e[0] = rng.normal(0.0, sd / math.sqrt(1.0 - phi**2))
    e[1:] = rng.normal(0.0, sd, T)
    return level + lfilter([1.0], [1.0, -phi], e)


def simulate_panel(
    stock_params: list[StockParams],
    variant: str,
    T: int,
    factor_params: FactorParams | None = None,
    seed: int | np.random.SeedSequence = 0,
    dates: np.ndarray | None = None,
    intensity_shape: float = 1.0,
    intensity_rate: float = 50.0,
) -> tuple[ReturnsPanel, LatentState]:
    """Exact forward draw of a panel plus its latent ground truth.

    Calendar gaps come from ``dates`` when given, otherwise every gap is
    one day.  For the independent-intensity variant each cell's intensity
    is Gam(intensity_shape, intensity_rate) in shape/rate form.  Separate
    seed streams drive the volatility block and the jump block of each
    stock, so degenerate-jump settings reproduce the no-jump panel
    draw for draw under the same seed.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if T < 1:
        raise ValueError("T must be at least 1")
    p = len(stock_params)
    if p < 1:
        raise ValueError("need at least one stock")
    if variant == "svj_factor":
        if factor_params is None or factor_params.n_factors < 1:
            raise ValueError("factor variant needs factor parameters with K >= 1")
        for sp in stock_params:
            if sp.w.size != factor_params.n_factors:
                raise ValueError("loading length must equal the factor count")
    if intensity_shape <= 0 or intensity_rate <= 0:
        raise ValueError("intensity law parameters must be positive")

    ss = seed if isinstance(seed, np.random.SeedSequence) \
        else np.random.SeedSequence(seed)
    factor_child, *stock_children = ss.spawn(1 + 2 * p)

    if dates is not None:
        dates = np.asarray(dates, dtype="datetime64[D]")
        if dates.shape != (T,):
            raise ValueError("dates length must equal T")
        deltas_row = deltas_from_dates(dates)
    else:
        deltas_row = np.ones(T)
    deltas = np.tile(deltas_row, (p, 1))

    K = factor_params.n_factors if variant == "svj_factor" else 0
    f = np.zeros((K, T + 1))
    if variant == "svj_factor":
        frng = np.random.default_rng(factor_child)
        for k in range(K):
            f[k] = _stationary_ar1_path(frng, 0.0, float(factor_params.alpha[k]),
                                        1.0, T)
        b_vec = np.array([sp.b for sp in stock_params])
        w_mat = np.vstack([sp.w for sp in stock_params])
        lam = intensity_from_factors(b_vec, w_mat, f, factor_params.lambda_star)
    else:
        lam = np.zeros((p, T))

    values = np.empty((p, T))
    h = np.empty((p, T + 1))
    n = np.zeros((p, T), dtype=np.int64)
    xi: list[dict[int, np.ndarray]] = []
    xi_sums = np.zeros((p, T))

    for i, sp in enumerate(stock_params):
        vol_rng = np.random.default_rng(stock_children[2 * i])
        jump_rng = np.random.default_rng(stock_children[2 * i + 1])
        h[i] = _stationary_ar1_path(vol_rng, sp.mu, sp.phi, sp.sigma2_eta, T)
        eps = vol_rng.standard_normal(T)

        if variant == "svj_independent":
            lam[i] = jump_rng.gamma(intensity_shape, 1.0 / intensity_rate, T)
        if variant != "sv":
            n[i] = jump_rng.poisson(deltas[i] * lam[i])
        cells: dict[int, np.ndarray] = {}
        sd_xi = math.sqrt(sp.sigma2_xi)
        for t in np.nonzero(n[i])[0]:
            sizes = jump_rng.normal(sp.mu_xi, sd_xi, int(n[i, t]))
            cells[int(t)] = sizes
            xi_sums[i, t] = sizes.sum()
        xi.append(cells)
        values[i] = np.exp(h[i, 1:] / 2.0) * eps + xi_sums[i]

    panel = ReturnsPanel(values=values, deltas=deltas, dates=dates)
    state = LatentState(h=h, n=n, xi=xi, xi_sums=xi_sums, f=f, lam=lam)
    state.validate()
    return panel, state


def write_panel_csv(panel: ReturnsPanel, path) -> None:
    """Emit the ingestion schema: a date column plus one return column per
    stock, 17 significant digits."""
    dates = panel.dates
    if dates is None:
        dates = business_day_calendar(panel.n_times)
    frame = pd.DataFrame({"date": np.asarray(dates, dtype="datetime64[D]")})
    for i, name in enumerate(panel.names):
        frame[name] = panel.values[i]
    frame.to_csv(path, index=False, float_format="%.17g")


# ---------------------------------------------------------------------------
# robust jump screen


@dataclass
class JumpDetection:
    """Outlier screen result: flagged time indices, the robust location
    and scale used, and whether the series was too degenerate to scale."""

    times: np.ndarray
    center: float
    scale: float
    degenerate: bool


def empirical_jump_detector(returns_row: np.ndarray,
                            threshold: float = 3.0) -> JumpDetection:
    """Flag returns beyond ``threshold`` robust standard deviations.

    Location is the median; scale is the Rousseeuw-Croux pairwise
    estimator with the Gaussian consistency factor.  A zero scale
    (constant or near-constant series) flags nothing and sets the
    degeneracy marker instead.
    """
    x = np.asarray(returns_row, dtype=float)
    if x.ndim != 1 or x.size < 20:
        raise ValueError("need a 1-D series of at least 20 returns")
    if not np.all(np.isfinite(x)):
        raise ValueError("returns must be finite")
    center = float(np.median(x))
    scale = float(qn_scale(x))
    if not (scale > 0.0 and math.isfinite(scale)):
        return JumpDetection(times=np.zeros(0, dtype=np.int64), center=center,
                             scale=0.0, degenerate=True)
    times = np.nonzero(np.abs(x - center) > threshold * scale)[0]
    return JumpDetection(times=times, center=center, scale=scale,
                         degenerate=False)
