"""Estimator facade: one object that carries a panel through posterior
sampling and out-of-sample evaluation with the usual fit/params surface."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import forecast as fc
from . import mcmc
from .model import FactorParams, PriorSpec, ReturnsPanel

# forecasting streams are salted so they never replay the chain's draws
FORECAST_SALT = 7919


class ForecastResult:
    """Cumulative out-of-sample log marginal likelihoods.

    ``per_stock`` has one row per step and one column per stock;
    ``panel`` is the summed (product-form) series.  The factor variant
    additionally reports the joint-weight series, which is noisier and
    kept for diagnostics only.
    """

    def __init__(self, per_stock: np.ndarray,
                 global_logml: np.ndarray | None = None,
                 ensemble: fc.AisEnsemble | None = None):
        self.per_stock = np.asarray(per_stock, dtype=float)
        self.global_logml = global_logml
        self.ensemble = ensemble

    @property
    def panel(self) -> np.ndarray:
        return self.per_stock.sum(axis=1)

    @property
    def n_steps(self) -> int:
        return self.per_stock.shape[0]

    def increments(self) -> np.ndarray:
        """Per-step panel log predictive densities (first differences)."""
        return np.diff(self.panel, prepend=0.0)

    def per_stock_increments(self) -> np.ndarray:
        return np.diff(self.per_stock, axis=0, prepend=0.0)


class SvjEstimator(BaseEstimator):
    """Panel stochastic-volatility sampler with optional jumps and a
    shared dynamic intensity factor.

    Parameters mirror the chain configuration; ``prior`` overrides the
    data-driven default hyperparameters.  After ``fit`` the posterior
    draws live in ``draws_`` and point estimates in ``stock_params_``
    (and ``factor_params_`` for the factor variant).  ``forecast`` holds
    parameters at those posterior means and scores out-of-sample returns
    by sequential Monte Carlo (independent variants) or the bridged
    importance-sampling ensemble (factor variant).
    """

    def __init__(self, variant: str = "svj_independent", n_factors: int = 0,
                 iterations: int = 6000, burn_in: int = 1000, thin: int = 1,
                 seed: int = 0, workers: int = 1, path_stride: int = 10,
                 use_asis: bool = True, prior: PriorSpec | None = None,
                 n_particles: int = fc.DEFAULT_PARTICLES,
                 bridge_sweeps: int = fc.DEFAULT_BRIDGE_SWEEPS,
                 calibration_sweeps: int = 200):
        self.variant = variant
        self.n_factors = n_factors
        self.iterations = iterations
        self.burn_in = burn_in
        self.thin = thin
        self.seed = seed
        self.workers = workers
        self.path_stride = path_stride
        self.use_asis = use_asis
        self.prior = prior
        self.n_particles = n_particles
        self.bridge_sweeps = bridge_sweeps
        self.calibration_sweeps = calibration_sweeps

    def _as_panel(self, X) -> ReturnsPanel:
        if isinstance(X, ReturnsPanel):
            return X
        return ReturnsPanel(values=np.asarray(X, dtype=float))

    def fit(self, X, y=None) -> "SvjEstimator":
        """Run the posterior sampler on a panel ((p, T) array or
        ReturnsPanel); ignores ``y``."""
        panel = self._as_panel(X)
        prior = self.prior if self.prior is not None \
            else PriorSpec.from_panel(panel)
        config = mcmc.McmcConfig(
            iterations=self.iterations, burn_in=self.burn_in, thin=self.thin,
            variant=self.variant, n_factors=self.n_factors, seed=self.seed,
            workers=self.workers, path_stride=self.path_stride,
            use_asis=self.use_asis)
        self.panel_ = panel
        self.prior_ = prior
        self.config_ = config
        self.draws_ = mcmc.run_chain(panel, prior, config)
        self.stock_params_ = self.draws_.posterior_mean_params()
        if self.variant == "svj_factor":
            self.factor_params_ = FactorParams(
                alpha=self.draws_.alpha.mean(axis=0),
                lambda_star=prior.lambda_star)
        else:
            self.factor_params_ = None
        return self

    def forecast(self, out_values, out_deltas=None,
                 seed: int | None = None) -> ForecastResult:
        """Score an out-of-sample stretch (p, steps) at the fitted
        posterior-mean parameters."""
        check_is_fitted(self, "draws_")
        out_values = np.atleast_2d(np.asarray(out_values, dtype=float))
        p = self.panel_.values.shape[0]
        if out_values.shape[0] != p:
            raise ValueError("out-of-sample rows must match the fitted panel")
        if out_deltas is None:
            out_deltas = np.ones_like(out_values)
        out_deltas = np.atleast_2d(np.asarray(out_deltas, dtype=float))
        if out_deltas.shape != out_values.shape:
            raise ValueError("deltas shape must match values")
        seed = self.seed if seed is None else seed

        if self.variant == "svj_factor":
            ens = fc.ais_forecast(
                self.draws_.h_paths, self.draws_.f_paths, self.draws_.n_paths,
                self.panel_.values, self.panel_.deltas, self.stock_params_,
                self.factor_params_, out_values, out_deltas,
                n_trajectories=self.n_particles,
                bridge_sweeps=self.bridge_sweeps,
                seed=[seed, FORECAST_SALT], workers=self.workers,
                calibration_sweeps=self.calibration_sweeps)
            return ForecastResult(ens.per_stock_curve(),
                                  global_logml=ens.global_curve(),
                                  ensemble=ens)

        children = np.random.SeedSequence([seed, FORECAST_SALT]).spawn(p)
        pf_variant = "sv" if self.variant == "sv" else "svj_independent"
        inc = np.empty((p, out_values.shape[1]))

        def one_stock(i: int) -> None:
            inc[i] = fc.particle_filter(
                self.draws_.h_last[:, i], self.stock_params_[i],
                out_values[i], out_deltas[i], n_particles=self.n_particles,
                rng=np.random.default_rng(children[i]), variant=pf_variant,
                intensity_shape=self.prior_.delta, intensity_rate=self.prior_.c)

        if self.workers > 1 and p > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                list(pool.map(one_stock, range(p)))
        else:
            for i in range(p):
                one_stock(i)
        return ForecastResult(np.cumsum(inc, axis=1).T)

    def jump_probabilities(self) -> np.ndarray:
        """Posterior probability of at least one jump, per cell (p, T)."""
        check_is_fitted(self, "draws_")
        return self.draws_.jump_prob

    def effective_sample_sizes(self) -> dict[str, np.ndarray]:
        """Chain ESS per parameter block (per stock where applicable)."""
        check_is_fitted(self, "draws_")
        d = self.draws_
        out = {}
        blocks = {"mu": d.mu, "phi": d.phi, "sigma2_eta": d.sigma2_eta}
        if self.variant != "sv":
            blocks.update({"mu_xi": d.mu_xi, "sigma2_xi": d.sigma2_xi})
        if self.variant == "svj_factor":
            blocks.update({"b": d.b, "alpha": d.alpha})
            for k in range(self.n_factors):
                blocks[f"w{k + 1}"] = d.w[:, :, k]
        for name, chain in blocks.items():
            out[name] = np.array([
                float(mcmc.effective_sample_size(chain[:, j]))
                for j in range(chain.shape[1])])
        return out
