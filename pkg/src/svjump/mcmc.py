"""Chain orchestration: full panel sweeps, draw storage, checkpoints.

One sweep walks every stock through its conditional updates (volatility
block, level, interweaved re-update, jump counts, jump sizes, jump
hyperparameters, intensity loadings), then updates the shared factor
block.  Reduced variants switch steps off: "svj_independent" replaces
the factor machinery with conjugate per-cell intensity draws,
"sv" skips everything jump-related.

Per-stock RNG streams are spawned from the seed and the stock index, so
results do not depend on the worker count or scheduling order.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import os
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np

from . import model, samplers
from .model import PriorSpec, ReturnsPanel

CHECKPOINT_VERSION = 1

VARIANTS = ("sv", "svj_independent", "svj_factor")


class ChainError(RuntimeError):
    """Fatal chain failure (non-finite state, divergence), iteration-tagged."""


class CheckpointError(RuntimeError):
    """Checkpoint could not be written, read, or matched to the run."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class McmcConfig:
    iterations: int
    burn_in: int
    thin: int = 1
    variant: str = "svj_independent"
    n_factors: int = 0
    seed: int = 0
    workers: int = 1
    checkpoint_interval: int = 0
    checkpoint_path: str | None = None
    path_stride: int = 10
    use_asis: bool = True
    # diagnostic switch: swaps the factor variant's intensity machinery
    # for the conjugate per-cell draws, leaving every other step in place
    disable_factor_step: bool = False

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if (self.iterations - self.burn_in) % self.thin:
            raise ValueError("iterations - burn_in must be divisible by thin")
        if self.variant == "svj_factor" and self.n_factors < 1:
            raise ValueError("factor variant needs n_factors >= 1")
        if self.variant != "svj_factor":
            self.n_factors = 0
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.checkpoint_interval < 0 or self.path_stride < 0:
            raise ValueError("intervals must be non-negative")
        if self.checkpoint_interval and not self.checkpoint_path:
            raise ValueError("checkpointing needs a path")

    @property
    def n_draws(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# ---------------------------------------------------------------------------
# mutable chain state


@dataclass
class ChainState:
    """Everything a sweep reads and writes, including RNG and tuning."""

    iteration: int
    mu: np.ndarray
    phi: np.ndarray
    sigma2_eta: np.ndarray
    mu_xi: np.ndarray
    sigma2_xi: np.ndarray
    b: np.ndarray
    w: np.ndarray                      # (p, K)
    h: np.ndarray                      # (p, T+1)
    n: np.ndarray                      # (p, T)
    xi: list[dict[int, np.ndarray]]
    xi_sums: np.ndarray                # (p, T)
    lam: np.ndarray                    # (p, T)
    f: np.ndarray                      # (K, T+1)
    alpha: np.ndarray                  # (K,)
    stock_rngs: list[np.random.Generator]
    factor_rng: np.random.Generator
    vol_tuning: list[samplers.AuxTuning]
    asis_vol: list[samplers.AsisVolScales]
    loading_scales: list[samplers.AdaptiveScale]
    factor_tuning: samplers.AuxTuning
    asis_factor_scale: samplers.AdaptiveScale

    @property
    def n_stocks(self) -> int:
        return self.h.shape[0]

    def freeze_tuning(self) -> None:
        for tn in self.vol_tuning:
            tn.freeze()
        for sc in self.asis_vol:
            sc.freeze()
        for sc in self.loading_scales:
            sc.frozen = True
        self.factor_tuning.freeze()
        self.asis_factor_scale.frozen = True

    def check_finite(self) -> None:
        ok = (np.all(np.isfinite(self.h)) and np.all(np.isfinite(self.f))
              and np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.lam))
              and np.all(np.isfinite(self.xi_sums)))
        if not ok:
            raise ChainError(f"non-finite state at iteration {self.iteration}")


def _spawn_rngs(seed: int, p: int) -> tuple[list[np.random.Generator],
                                            np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(p + 1)
    return ([np.random.default_rng(c) for c in children[:p]],
            np.random.default_rng(children[p]))


def _fresh_tuning(p: int) -> tuple[list, list, list,
                                   samplers.AuxTuning, samplers.AdaptiveScale]:
    vol = [samplers.AuxTuning() for _ in range(p)]
    asis = [samplers.AsisVolScales() for _ in range(p)]
    loads = [samplers.AdaptiveScale(0.3, 0.25) for _ in range(p)]
    return vol, asis, loads, samplers.AuxTuning(), samplers.AdaptiveScale(0.2, 0.25)


def init_state(panel: ReturnsPanel, prior: PriorSpec,
               config: McmcConfig) -> ChainState:
    """Deterministic data-informed starting point."""
    p, T = panel.values.shape
    K = config.n_factors
    var0 = np.maximum(panel.values.var(axis=1), 1e-8)
    mu0 = np.log(var0)
    h0 = np.repeat(mu0[:, None], T + 1, axis=1)
    lam0 = np.zeros((p, T))
    b0 = np.full(p, prior.b_mean)
    if _gibbs_intensity(config):
        lam0[:] = prior.delta / prior.c
    elif config.variant == "svj_factor":
        lam0[:] = prior.lambda_star * model.sigmoid(np.full((p, T), prior.b_mean))
    stock_rngs, factor_rng = _spawn_rngs(config.seed, p)
    vol, asis, loads, ftune, fscale = _fresh_tuning(p)
    state = ChainState(
        iteration=0,
        mu=mu0,
        phi=np.full(p, 0.95),
        sigma2_eta=np.full(p, 0.05),
        mu_xi=np.zeros(p),
        sigma2_xi=prior.sigma2_xi_scale / (prior.sigma2_xi_shape - 1.0),
        b=b0,
        w=np.zeros((p, K)),
        h=h0,
        n=np.zeros((p, T), dtype=np.int64),
        xi=[{} for _ in range(p)],
        xi_sums=np.zeros((p, T)),
        lam=lam0,
        f=np.zeros((K, T + 1)),
        alpha=np.zeros(K),
        stock_rngs=stock_rngs,
        factor_rng=factor_rng,
        vol_tuning=vol,
        asis_vol=asis,
        loading_scales=loads,
        factor_tuning=ftune,
        asis_factor_scale=fscale,
    )
    if config.burn_in == 0:
        state.freeze_tuning()
    return state


def prior_state_draw(rng: np.random.Generator, p: int, T: int,
                     prior: PriorSpec, config: McmcConfig,
                     deltas: np.ndarray | None = None) -> ChainState:
    """Joint draw of (parameters, latents) from the prior.

    Used by prior-predictive checks and the sampler self-consistency
    harness; the RNG/tuning slots are filled with fresh defaults.
    """
    if deltas is None:
        deltas = np.ones((p, T))
    K = config.n_factors
    mu = rng.normal(prior.mu_mean, math.sqrt(prior.mu_var), p)
    phi = 2.0 * rng.beta(prior.phi_beta_a, prior.phi_beta_b, p) - 1.0
    sigma2_eta = rng.gamma(prior.sigma2_eta_shape,
                           1.0 / prior.sigma2_eta_rate, p)
    mu_xi = rng.normal(0.0, np.sqrt(prior.mu_xi_var), p)
    sigma2_xi = prior.sigma2_xi_scale / rng.gamma(prior.sigma2_xi_shape, 1.0, p)
    b = rng.normal(prior.b_mean, math.sqrt(prior.b_var), p)
    w = rng.normal(0.0, math.sqrt(prior.w_var), (p, K))
    alpha = rng.uniform(-1.0, 1.0, K)

    h = np.empty((p, T + 1))
    for i in range(p):
        sd = math.sqrt(sigma2_eta[i])
        h[i, 0] = mu[i] + rng.normal(0, sd / math.sqrt(1 - phi[i] ** 2))
        for t in range(T):
            h[i, t + 1] = (mu[i] + phi[i] * (h[i, t] - mu[i])
                           + sd * rng.standard_normal())

    f = np.empty((K, T + 1))
    for k in range(K):
        f[k, 0] = rng.normal(0, 1 / math.sqrt(1 - alpha[k] ** 2))
        for t in range(T):
            f[k, t + 1] = alpha[k] * f[k, t] + rng.standard_normal()

    if config.variant == "svj_factor":
        lam = model.intensity_from_factors(b, w, f, prior.lambda_star)
    elif config.variant == "svj_independent":
        lam = rng.gamma(prior.delta, 1.0 / prior.c, (p, T))
    else:
        lam = np.zeros((p, T))

    n = rng.poisson(deltas * lam) if config.variant != "sv" \
        else np.zeros((p, T), dtype=np.int64)
    n = n.astype(np.int64)
    xi: list[dict[int, np.ndarray]] = [{} for _ in range(p)]
    xi_sums = np.zeros((p, T))
    for i in range(p):
        sd = math.sqrt(sigma2_xi[i])
        for t in np.nonzero(n[i])[0]:
            sizes = rng.normal(mu_xi[i], sd, int(n[i, t]))
            xi[i][int(t)] = sizes
            xi_sums[i, t] = sizes.sum()

    stock_rngs, factor_rng = _spawn_rngs(0, p)
    vol, asis, loads, ftune, fscale = _fresh_tuning(p)
    return ChainState(iteration=0, mu=mu, phi=phi, sigma2_eta=sigma2_eta,
                      mu_xi=mu_xi, sigma2_xi=sigma2_xi, b=b, w=w, h=h, n=n,
                      xi=xi, xi_sums=xi_sums, lam=lam, f=f, alpha=alpha,
                      stock_rngs=stock_rngs, factor_rng=factor_rng,
                      vol_tuning=vol, asis_vol=asis, loading_scales=loads,
                      factor_tuning=ftune, asis_factor_scale=fscale)


def redraw_returns(rng: np.random.Generator, state: ChainState) -> np.ndarray:
    """One draw of the panel given the current latents: the jump part is
    already summed in xi_sums, the diffusion part is exp(h/2) noise."""
    scale = np.exp(state.h[:, 1:] / 2.0)
    return state.xi_sums + scale * rng.standard_normal(scale.shape)


# ---------------------------------------------------------------------------
# one sweep


def _gibbs_intensity(config: McmcConfig) -> bool:
    """True when intensities come from the conjugate per-cell conditionals
    instead of the factor structure."""
    return (config.variant == "svj_independent"
            or (config.variant == "svj_factor" and config.disable_factor_step))


def _update_stock(i: int, state: ChainState, values: np.ndarray,
                  deltas: np.ndarray, prior: PriorSpec,
                  config: McmcConfig) -> None:
    rng = state.stock_rngs[i]
    r = values[i]
    h, phi, s2, diag = samplers.agrad_update_volatility(
        rng, state.h[i], float(state.phi[i]), float(state.sigma2_eta[i]),
        float(state.mu[i]), r, state.n[i], float(state.mu_xi[i]),
        float(state.sigma2_xi[i]), prior, state.vol_tuning[i])
    state.h[i] = h
    state.phi[i], state.sigma2_eta[i] = phi, s2

    state.mu[i] = samplers.sample_mu_volatility(
        rng, state.h[i], float(state.phi[i]), float(state.sigma2_eta[i]), prior)

    if config.use_asis:
        h, mu_, phi, s2, _ = samplers.asis_volatility_move(
            rng, state.h[i], float(state.mu[i]), float(state.phi[i]),
            float(state.sigma2_eta[i]), r, state.n[i], float(state.mu_xi[i]),
            float(state.sigma2_xi[i]), prior, state.asis_vol[i])
        state.h[i] = h
        state.mu[i], state.phi[i], state.sigma2_eta[i] = mu_, phi, s2

    if config.variant == "sv":
        return

    state.n[i] = samplers.sample_jump_counts_row(
        rng, r, state.h[i, 1:], deltas[i] * state.lam[i],
        float(state.mu_xi[i]), float(state.sigma2_xi[i]))

    cells: dict[int, np.ndarray] = {}
    state.xi_sums[i] = 0.0
    for t in np.nonzero(state.n[i])[0]:
        sizes = samplers.sample_jump_sizes(
            rng, float(r[t]), float(state.h[i, t + 1]), int(state.n[i, t]),
            float(state.mu_xi[i]), float(state.sigma2_xi[i]))
        cells[int(t)] = sizes
        state.xi_sums[i, t] = sizes.sum()
    state.xi[i] = cells

    total = int(state.n[i].sum())
    xi_total = float(state.xi_sums[i].sum())
    state.mu_xi[i] = samplers.sample_mu_xi(
        rng, total, xi_total, float(state.sigma2_xi[i]), prior, i)
    sq_dev = 0.0
    for sizes in cells.values():
        sq_dev += float(((sizes - state.mu_xi[i]) ** 2).sum())
    state.sigma2_xi[i] = samplers.sample_sigma2_xi(rng, total, sq_dev, prior, i)

    if _gibbs_intensity(config):
        state.lam[i] = rng.gamma(state.n[i] + prior.delta,
                                 1.0 / (prior.c + deltas[i]))
    else:
        b_new, w_new, _ = samplers.update_loadings(
            rng, float(state.b[i]), state.w[i], state.f, state.n[i],
            deltas[i], prior, state.loading_scales[i])
        state.b[i] = b_new
        state.w[i] = w_new


def _update_factors(state: ChainState, deltas: np.ndarray, prior: PriorSpec,
                    config: McmcConfig) -> None:
    f, alpha, _ = samplers.agrad_update_factors(
        state.factor_rng, state.f, state.alpha, state.b, state.w, state.n,
        deltas, prior.lambda_star, state.factor_tuning)
    if config.use_asis:
        f, alpha, _ = samplers.asis_factor_move(
            state.factor_rng, f, alpha, state.b, state.w, state.n, deltas,
            prior.lambda_star, state.asis_factor_scale)
    state.f, state.alpha = f, alpha
    state.lam = model.intensity_from_factors(state.b, state.w, state.f,
                                             prior.lambda_star)


def sweep(state: ChainState, values: np.ndarray, deltas: np.ndarray,
          prior: PriorSpec, config: McmcConfig,
          pool: ThreadPoolExecutor | None = None) -> None:
    """One full pass: every stock, then the shared factor block."""
    p = state.n_stocks
    if pool is not None and p > 1:
        list(pool.map(lambda i: _update_stock(i, state, values, deltas,
                                              prior, config), range(p)))
    else:
        for i in range(p):
            _update_stock(i, state, values, deltas, prior, config)
    if config.variant == "svj_factor" and not config.disable_factor_step:
        _update_factors(state, deltas, prior, config)
    state.iteration += 1


# ---------------------------------------------------------------------------
# draw storage


@dataclass
class PosteriorDraws:
    """Thinned parameter draws plus running panel summaries.

    Latent paths are stored for every ``path_stride``-th retained draw
    only; the final-time volatility states h_T (needed to start the
    particle filter) and all parameter draws are kept for every retained
    draw.  jump_prob / lam_mean / n_mean are running means over retained
    draws.
    """

    config: McmcConfig
    mu: np.ndarray
    phi: np.ndarray
    sigma2_eta: np.ndarray
    mu_xi: np.ndarray
    sigma2_xi: np.ndarray
    b: np.ndarray
    w: np.ndarray
    alpha: np.ndarray
    loglik: np.ndarray
    h_last: np.ndarray
    jump_prob: np.ndarray
    lam_mean: np.ndarray
    n_mean: np.ndarray
    h_paths: np.ndarray
    n_paths: np.ndarray
    f_paths: np.ndarray
    acceptance: dict[str, np.ndarray]
    n_retained: int = 0

    @classmethod
    def allocate(cls, config: McmcConfig, p: int, T: int) -> "PosteriorDraws":
        D = config.n_draws
        K = config.n_factors
        n_paths = 0 if config.path_stride == 0 \
            else (D + config.path_stride - 1) // config.path_stride
        return cls(
            config=config,
            mu=np.zeros((D, p)), phi=np.zeros((D, p)),
            sigma2_eta=np.zeros((D, p)), mu_xi=np.zeros((D, p)),
            sigma2_xi=np.zeros((D, p)), b=np.zeros((D, p)),
            w=np.zeros((D, p, K)), alpha=np.zeros((D, K)),
            loglik=np.zeros(D), h_last=np.zeros((D, p)),
            jump_prob=np.zeros((p, T)), lam_mean=np.zeros((p, T)),
            n_mean=np.zeros((p, T)),
            h_paths=np.zeros((n_paths, p, T + 1)),
            n_paths=np.zeros((n_paths, p, T), dtype=np.int64),
            f_paths=np.zeros((n_paths, K, T + 1)),
            acceptance={},
        )

    def record(self, state: ChainState, values: np.ndarray) -> None:
        d = self.n_retained
        self.mu[d] = state.mu
        self.phi[d] = state.phi
        self.sigma2_eta[d] = state.sigma2_eta
        self.mu_xi[d] = state.mu_xi
        self.sigma2_xi[d] = state.sigma2_xi
        self.b[d] = state.b
        self.w[d] = state.w
        self.alpha[d] = state.alpha
        self.h_last[d] = state.h[:, -1]
        ll = 0.0
        for i in range(state.n_stocks):
            ll += float(model.cell_loglik_marginal(
                values[i], state.h[i, 1:], state.n[i],
                float(state.mu_xi[i]), float(state.sigma2_xi[i])).sum())
        self.loglik[d] = ll
        # running means over retained draws
        wt = 1.0 / (d + 1)
        self.jump_prob += wt * ((state.n > 0) - self.jump_prob)
        self.lam_mean += wt * (state.lam - self.lam_mean)
        self.n_mean += wt * (state.n - self.n_mean)
        stride = self.config.path_stride
        if stride and d % stride == 0:
            j = d // stride
            self.h_paths[j] = state.h
            self.n_paths[j] = state.n
            self.f_paths[j] = state.f
        self.n_retained = d + 1

    def finalize(self, state: ChainState) -> None:
        if not (np.all(np.abs(self.phi) < 1.0)
                and np.all(np.abs(self.alpha) < 1.0)):
            raise ChainError("stored AR coefficients left (-1, 1)")
        self.acceptance = {
            "vol_path": np.array([t.gamma.rate for t in state.vol_tuning]),
            "vol_joint": np.array([t.kappa.rate for t in state.vol_tuning]),
            "asis_mu": np.array([s.mu.rate for s in state.asis_vol]),
            "asis_log_s2": np.array([s.log_s2.rate for s in state.asis_vol]),
            "loadings": np.array([s.rate for s in state.loading_scales]),
            "factor_path": np.array([state.factor_tuning.gamma.rate]),
            "factor_joint": np.array([state.factor_tuning.kappa.rate]),
            "asis_alpha": np.array([state.asis_factor_scale.rate]),
        }

    def posterior_mean_params(self) -> list[model.StockParams]:
        """Per-stock posterior-mean parameter sets (the fixed-parameter
        convention used by the forecasting layer)."""
        out = []
        for i in range(self.mu.shape[1]):
            out.append(model.StockParams(
                mu=float(self.mu[:, i].mean()),
                phi=float(self.phi[:, i].mean()),
                sigma2_eta=float(self.sigma2_eta[:, i].mean()),
                mu_xi=float(self.mu_xi[:, i].mean()),
                sigma2_xi=float(self.sigma2_xi[:, i].mean()),
                b=float(self.b[:, i].mean()),
                w=self.w[:, i, :].mean(axis=0),
            ))
        return out


# ---------------------------------------------------------------------------
# chain driver


def run_chain(panel: ReturnsPanel, prior: PriorSpec,
              config: McmcConfig) -> PosteriorDraws:
    """Run the configured chain from a fresh deterministic start."""
    prior = _broadcast_prior(prior, panel.n_stocks)
    state = init_state(panel, prior, config)
    draws = PosteriorDraws.allocate(config, panel.n_stocks, panel.n_times)
    return _drive(state, draws, panel, prior, config)


def resume_chain(panel: ReturnsPanel, prior: PriorSpec, checkpoint_path,
                 iterations: int | None = None) -> PosteriorDraws:
    """Continue a checkpointed run, optionally extending the horizon."""
    state, config, draws = load_checkpoint(checkpoint_path)
    if iterations is not None:
        config = McmcConfig(**{**config.to_dict(), "iterations": iterations})
        full = PosteriorDraws.allocate(config, panel.n_stocks, panel.n_times)
        _copy_draws(draws, full)
        draws = full
    prior = _broadcast_prior(prior, panel.n_stocks)
    return _drive(state, draws, panel, prior, config)


def _broadcast_prior(prior: PriorSpec, p: int) -> PriorSpec:
    """Per-stock copies of the jump hyperparameters, without mutating the
    caller's object."""
    if prior.sigma2_xi_scale.size not in (1, p) or prior.mu_xi_var.size not in (1, p):
        raise ValueError("prior jump hyperparameters must be scalar or per-stock")
    if prior.sigma2_xi_scale.size == p and prior.mu_xi_var.size == p:
        return prior
    return replace(
        prior,
        sigma2_xi_scale=np.broadcast_to(prior.sigma2_xi_scale, (p,)).copy(),
        mu_xi_var=np.broadcast_to(prior.mu_xi_var, (p,)).copy())


def _copy_draws(src: PosteriorDraws, dst: PosteriorDraws) -> None:
    d = src.n_retained
    for name in ("mu", "phi", "sigma2_eta", "mu_xi", "sigma2_xi", "b", "w",
                 "alpha", "loglik", "h_last"):
        getattr(dst, name)[:d] = getattr(src, name)[:d]
    dst.jump_prob[:] = src.jump_prob
    dst.lam_mean[:] = src.lam_mean
    dst.n_mean[:] = src.n_mean
    stride = dst.config.path_stride
    if stride:
        j = (d + stride - 1) // stride
        dst.h_paths[:j] = src.h_paths[:j]
        dst.n_paths[:j] = src.n_paths[:j]
        dst.f_paths[:j] = src.f_paths[:j]
    dst.n_retained = d


def _drive(state: ChainState, draws: PosteriorDraws, panel: ReturnsPanel,
           prior: PriorSpec, config: McmcConfig) -> PosteriorDraws:
    values, deltas = panel.values, panel.deltas
    pool = (ThreadPoolExecutor(max_workers=config.workers)
            if config.workers > 1 else None)
    try:
        while state.iteration < config.iterations:
            if state.iteration == config.burn_in and config.burn_in > 0:
                state.freeze_tuning()
            try:
                sweep(state, values, deltas, prior, config, pool)
            except RuntimeError as err:
                if isinstance(err, ChainError):
                    raise
                raise ChainError(
                    f"iteration {state.iteration}: {err}") from err
            state.check_finite()
            it = state.iteration
            if it > config.burn_in and (it - config.burn_in - 1) % config.thin == 0:
                draws.record(state, values)
            if (config.checkpoint_interval
                    and it % config.checkpoint_interval == 0):
                save_checkpoint(config.checkpoint_path, state, config, draws)
    finally:
        if pool is not None:
            pool.shutdown()
    draws.finalize(state)
    return draws


# ---------------------------------------------------------------------------
# checkpointing


def _rng_state(gen: np.random.Generator) -> dict:
    return gen.bit_generator.state


def _restore_rng(st: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = st
    return np.random.Generator(bg)


def _scale_state(s: samplers.AdaptiveScale) -> dict:
    return {"value": s.value, "target": s.target, "lo": s.lo, "hi": s.hi,
            "step": s.step, "frozen": s.frozen, "trials": s.trials,
            "accepts": s.accepts}


def _restore_scale(d: dict) -> samplers.AdaptiveScale:
    return samplers.AdaptiveScale(**d)


def _tuning_state(t: samplers.AuxTuning) -> dict:
    return {"gamma": _scale_state(t.gamma), "kappa": _scale_state(t.kappa)}


def _restore_tuning(d: dict) -> samplers.AuxTuning:
    out = samplers.AuxTuning()
    out.gamma = _restore_scale(d["gamma"])
    out.kappa = _restore_scale(d["kappa"])
    return out


def config_hash(config: McmcConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(path, state: ChainState, config: McmcConfig,
                    draws: PosteriorDraws) -> None:
    """Atomic write of the complete sampler state plus retained draws."""
    try:
        header = {
            "version": CHECKPOINT_VERSION,
            "config": config.to_dict(),
            "config_hash": config_hash(config),
            "iteration": state.iteration,
            "n_retained": draws.n_retained,
            "stock_rngs": [_rng_state(g) for g in state.stock_rngs],
            "factor_rng": _rng_state(state.factor_rng),
            "vol_tuning": [_tuning_state(t) for t in state.vol_tuning],
            "asis_vol": [{"mu": _scale_state(s.mu),
                          "log_s2": _scale_state(s.log_s2)}
                         for s in state.asis_vol],
            "loading_scales": [_scale_state(s) for s in state.loading_scales],
            "factor_tuning": _tuning_state(state.factor_tuning),
            "asis_factor_scale": _scale_state(state.asis_factor_scale),
        }
        arrays = {
            "mu": state.mu, "phi": state.phi, "sigma2_eta": state.sigma2_eta,
            "mu_xi": state.mu_xi, "sigma2_xi": state.sigma2_xi,
            "b": state.b, "w": state.w, "h": state.h, "n": state.n,
            "xi_sums": state.xi_sums, "lam": state.lam, "f": state.f,
            "alpha": state.alpha,
            "xi_flat": _flatten_xi(state.xi, state.n),
            "d_mu": draws.mu, "d_phi": draws.phi,
            "d_sigma2_eta": draws.sigma2_eta, "d_mu_xi": draws.mu_xi,
            "d_sigma2_xi": draws.sigma2_xi, "d_b": draws.b, "d_w": draws.w,
            "d_alpha": draws.alpha, "d_loglik": draws.loglik,
            "d_h_last": draws.h_last, "d_jump_prob": draws.jump_prob,
            "d_lam_mean": draws.lam_mean, "d_n_mean": draws.n_mean,
            "d_h_paths": draws.h_paths, "d_n_paths": draws.n_paths,
            "d_f_paths": draws.f_paths,
        }
        buf = io.BytesIO()
        np.savez(buf, header=np.frombuffer(
            json.dumps(header).encode(), dtype=np.uint8), **arrays)
        tmp = str(path) + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except (OSError, ValueError) as err:
        raise CheckpointError(f"checkpoint write failed: {err}") from err


def _flatten_xi(xi: list[dict[int, np.ndarray]], n: np.ndarray) -> np.ndarray:
    parts = []
    for i in range(n.shape[0]):
        for t in np.nonzero(n[i])[0]:
            parts.append(xi[i][int(t)])
    return np.concatenate(parts) if parts else np.zeros(0)


def _unflatten_xi(flat: np.ndarray, n: np.ndarray) -> list[dict[int, np.ndarray]]:
    out: list[dict[int, np.ndarray]] = []
    pos = 0
    for i in range(n.shape[0]):
        cells: dict[int, np.ndarray] = {}
        for t in np.nonzero(n[i])[0]:
            cnt = int(n[i, t])
            cells[int(t)] = flat[pos:pos + cnt].copy()
            pos += cnt
        out.append(cells)
    if pos != flat.size:
        raise CheckpointError("jump-size payload length mismatch")
    return out


def load_checkpoint(path) -> tuple[ChainState, McmcConfig, PosteriorDraws]:
    try:
        with np.load(path) as z:
            header = json.loads(bytes(z["header"]).decode())
            if header.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(
                    f"checkpoint version {header.get('version')} not supported")
            config = McmcConfig(**header["config"])
            if header["config_hash"] != config_hash(config):
                raise CheckpointError("config hash mismatch")
            arrays = {k: z[k] for k in z.files if k != "header"}
    except CheckpointError:
        raise
    except (OSError, ValueError, KeyError, zipfile.BadZipFile, json.JSONDecodeError) as err:
        raise CheckpointError(f"checkpoint unreadable: {err}") from err

    n = arrays["n"].astype(np.int64)
    state = ChainState(
        iteration=header["iteration"],
        mu=arrays["mu"], phi=arrays["phi"], sigma2_eta=arrays["sigma2_eta"],
        mu_xi=arrays["mu_xi"], sigma2_xi=arrays["sigma2_xi"],
        b=arrays["b"], w=arrays["w"], h=arrays["h"], n=n,
        xi=_unflatten_xi(arrays["xi_flat"], n), xi_sums=arrays["xi_sums"],
        lam=arrays["lam"], f=arrays["f"], alpha=arrays["alpha"],
        stock_rngs=[_restore_rng(s) for s in header["stock_rngs"]],
        factor_rng=_restore_rng(header["factor_rng"]),
        vol_tuning=[_restore_tuning(t) for t in header["vol_tuning"]],
        asis_vol=[_restore_asis(s) for s in header["asis_vol"]],
        loading_scales=[_restore_scale(s) for s in header["loading_scales"]],
        factor_tuning=_restore_tuning(header["factor_tuning"]),
        asis_factor_scale=_restore_scale(header["asis_factor_scale"]),
    )
    p, T1 = state.h.shape
    config_draws = PosteriorDraws.allocate(config, p, T1 - 1)
    for name, key in (("mu", "d_mu"), ("phi", "d_phi"),
                      ("sigma2_eta", "d_sigma2_eta"), ("mu_xi", "d_mu_xi"),
                      ("sigma2_xi", "d_sigma2_xi"), ("b", "d_b"), ("w", "d_w"),
                      ("alpha", "d_alpha"), ("loglik", "d_loglik"),
                      ("h_last", "d_h_last"), ("jump_prob", "d_jump_prob"),
                      ("lam_mean", "d_lam_mean"), ("n_mean", "d_n_mean"),
                      ("h_paths", "d_h_paths"), ("n_paths", "d_n_paths"),
                      ("f_paths", "d_f_paths")):
        stored = arrays[key]
        target = getattr(config_draws, name)
        if stored.shape != target.shape:
            raise CheckpointError(f"array {key} shape mismatch")
        target[...] = stored
    config_draws.n_retained = header["n_retained"]
    return state, config, config_draws


def _restore_asis(d: dict) -> samplers.AsisVolScales:
    out = samplers.AsisVolScales()
    out.mu = _restore_scale(d["mu"])
    out.log_s2 = _restore_scale(d["log_s2"])
    return out


# ---------------------------------------------------------------------------
# effective sample size


@dataclass
class EssResult:
    ess: float
    degenerate: bool = False

    def __float__(self) -> float:
        return self.ess


def effective_sample_size(chain: np.ndarray, max_order: int = 20) -> EssResult:
    """ESS as sample variance times length over the spectral density at
    zero, the latter from an autoregressive fit with AIC order selection.

    A constant chain is reported as fully effective with the degeneracy
    flag set.  Negative autocorrelation may push the estimate above the
    chain length; it is not clamped.
    """
    x = np.asarray(chain, dtype=float).ravel()
    S = x.size
    if S < 100:
        raise ValueError("need a chain of at least 100 draws")
    if not np.all(np.isfinite(x)):
        raise ValueError("chain contains non-finite draws")
    v2 = float(x.var(ddof=1))
    if v2 <= 0.0:
        return EssResult(ess=float(S), degenerate=True)

    from statsmodels.regression.linear_model import yule_walker

    qmax = int(min(max_order, S // 50, S - 2))
    best = (math.inf, 0.0)
    xc = x - x.mean()
    for q in range(qmax + 1):
        if q == 0:
            sigma2 = v2
            denom = 1.0
        else:
            try:
                rho, sigma = yule_walker(xc, order=q, method="adjusted")
            except (np.linalg.LinAlgError, ValueError):
                continue
            sigma2 = float(sigma) ** 2
            denom = float(1.0 - rho.sum()) ** 2
        if not (np.isfinite(sigma2) and sigma2 > 0 and denom > 0):
            continue
        aic = S * math.log(sigma2) + 2.0 * (q + 1)
        if aic < best[0]:
            best = (aic, sigma2 / denom)
    nu0 = best[1]
    if not (np.isfinite(nu0) and nu0 > 0):
        return EssResult(ess=float(S), degenerate=True)
    return EssResult(ess=v2 * S / nu0, degenerate=False)


# ---------------------------------------------------------------------------
# sampler self-consistency (successive-conditional simulator)


# two-sided 1% normal critical value
GEWEKE_CRITICAL = 2.5758293035489004


@dataclass
class GewekeReport:
    """z-scores of chain averages against analytic prior expectations."""

    z_scores: dict[str, float]
    ess: dict[str, float]
    n_sweeps: int
    critical: float = GEWEKE_CRITICAL

    @property
    def worst(self) -> float:
        return max(abs(z) for z in self.z_scores.values())

    @property
    def failures(self) -> list[str]:
        return [k for k, z in self.z_scores.items() if abs(z) >= self.critical]

    @property
    def passed(self) -> bool:
        return not self.failures


def _geweke_targets(prior: PriorSpec, config: McmcConfig) -> dict[str, float]:
    """Closed-form prior expectations of the tracked functionals.

    Functionals are stock averages, so targets average the (possibly
    per-stock) prior hyperparameters.  Second moments are tracked only
    where the functional itself has finite prior variance, which is why
    the jump-size variance enters through its reciprocal: the inverse
    gamma with shape 3 has no finite fourth moment, its reciprocal
    (gamma) has them all.
    """
    a, bb = prior.phi_beta_a, prior.phi_beta_b
    eb = a / (a + bb)
    eb2 = eb * (a + 1) / (a + bb + 1)
    sh, rt = prior.sigma2_eta_shape, prior.sigma2_eta_rate
    out = {
        "mu": float(prior.mu_mean),
        "mu_sq": float(prior.mu_mean ** 2 + prior.mu_var),
        "phi": 2.0 * eb - 1.0,
        "phi_sq": 4.0 * eb2 - 4.0 * eb + 1.0,
        "sigma2_eta": sh / rt,
        "sigma2_eta_sq": sh * (sh + 1) / rt ** 2,
    }
    if config.variant == "sv":
        return out
    xs = np.asarray(prior.sigma2_xi_scale, dtype=float)
    xv = np.asarray(prior.mu_xi_var, dtype=float)
    k = prior.sigma2_xi_shape
    out["mu_xi"] = 0.0
    out["mu_xi_sq"] = float(xv.mean())
    out["prec_xi"] = float((k / xs).mean())
    out["prec_xi_sq"] = float((k * (k + 1) / xs ** 2).mean())
    if _gibbs_intensity(config):
        d, c = prior.delta, prior.c
        out["lam"] = d / c
        out["lam_sq"] = d * (d + 1) / c ** 2
        out["count"] = d / c
        out["count_sq"] = d / c + d * (d + 1) / c ** 2
    else:
        out["b"] = float(prior.b_mean)
        out["b_sq"] = float(prior.b_mean ** 2 + prior.b_var)
        out["w"] = 0.0
        out["w_sq"] = float(prior.w_var)
        out["alpha"] = 0.0
        out["alpha_sq"] = 1.0 / 3.0
    return out


def _geweke_functionals(state: ChainState, config: McmcConfig,
                        names: list[str]) -> list[float]:
    vals = {
        "mu": state.mu.mean(),
        "mu_sq": (state.mu ** 2).mean(),
        "phi": state.phi.mean(),
        "phi_sq": (state.phi ** 2).mean(),
        "sigma2_eta": state.sigma2_eta.mean(),
        "sigma2_eta_sq": (state.sigma2_eta ** 2).mean(),
    }
    if config.variant != "sv":
        prec = 1.0 / state.sigma2_xi
        vals["mu_xi"] = state.mu_xi.mean()
        vals["mu_xi_sq"] = (state.mu_xi ** 2).mean()
        vals["prec_xi"] = prec.mean()
        vals["prec_xi_sq"] = (prec ** 2).mean()
        if _gibbs_intensity(config):
            vals["lam"] = state.lam.mean()
            vals["lam_sq"] = (state.lam ** 2).mean()
            vals["count"] = state.n.mean()
            vals["count_sq"] = (state.n.astype(float) ** 2).mean()
        else:
            vals["b"] = state.b.mean()
            vals["b_sq"] = (state.b ** 2).mean()
            vals["w"] = state.w.mean()
            vals["w_sq"] = (state.w ** 2).mean()
            vals["alpha"] = state.alpha.mean()
            vals["alpha_sq"] = (state.alpha ** 2).mean()
    return [float(vals[k]) for k in names]


def geweke_compare(prior: PriorSpec, config: McmcConfig, p: int, T: int,
                   n_sweeps: int, seed: int = 0,
                   warmup: int | None = None) -> GewekeReport:
    """Run the successive-conditional simulator and score it.

    Starts from a joint draw of (parameters, latents), then alternates a
    fresh panel draw given the latents with one full transition sweep.
    A correct sweep leaves the prior marginal over parameters invariant,
    so chain averages of the tracked functionals must match the targets
    from ``_geweke_targets`` up to Monte Carlo error.

    Proposal scales adapt for ``warmup`` sweeps, are then frozen, and a
    further ``warmup`` sweeps are discarded before collection begins:
    adaptation would perturb the invariant distribution, and the frozen
    kernel needs a moment to forget the adaptive transient.

    Standard errors come from ``effective_sample_size``, so the check is
    valid despite sweep-to-sweep autocorrelation.
    """
    if warmup is None:
        warmup = max(1000, n_sweeps // 20)
    prior = _broadcast_prior(prior, p)
    master = np.random.default_rng(np.random.SeedSequence(seed))
    state = prior_state_draw(master, p, T, prior, config)
    state.stock_rngs, state.factor_rng = _spawn_rngs(config.seed, p)
    deltas = np.ones((p, T))
    targets = _geweke_targets(prior, config)
    names = list(targets)
    for s in range(2 * warmup):
        if s == warmup:
            state.freeze_tuning()
        values = redraw_returns(master, state)
        sweep(state, values, deltas, prior, config)
    chains = np.empty((len(names), n_sweeps))
    for s in range(n_sweeps):
        values = redraw_returns(master, state)
        sweep(state, values, deltas, prior, config)
        chains[:, s] = _geweke_functionals(state, config, names)
    z_scores: dict[str, float] = {}
    ess: dict[str, float] = {}
    for j, name in enumerate(names):
        x = chains[j]
        r = effective_sample_size(x)
        ess[name] = r.ess
        sd = float(x.std(ddof=1))
        if sd == 0.0:
            z_scores[name] = 0.0 if x[0] == targets[name] else math.inf
            continue
        se = sd / math.sqrt(r.ess)
        z_scores[name] = float((x.mean() - targets[name]) / se)
    return GewekeReport(z_scores=z_scores, ess=ess, n_sweeps=n_sweeps)
