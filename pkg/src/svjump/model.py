"""Model types and closed-form densities for the jump-panel volatility model.

A panel of log-returns r_it follows, per stock i:

    r_it = exp(h_it / 2) eps_it + sum_{k<=n_it} xi_it^k
    h_it = mu_i + phi_i (h_{i,t-1} - mu_i) + sigma_eta_i eta_it
    n_it ~ Poisson(delta_it * lam_it),   xi ~ N(mu_xi_i, sigma2_xi_i)

with the log-variance path started from its stationary law.  Jump
intensities lam_it are either independent Gamma draws (so counts are
negative binomial marginally) or a bounded transform of a latent linear
factor process shared across stocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# data containers


@dataclass
class ReturnsPanel:
    """Complete panel of log-returns.

    values : (p, T) float array, one row per stock.
    deltas : (p, T) positive float array of calendar gaps in days
        (weekend-crossing observations get delta 3, plain days 1).
    dates : optional (T,) datetime64 array, strictly increasing.
    names : stock identifiers, length p.
    """

    values: np.ndarray
    deltas: np.ndarray | None = None
    dates: np.ndarray | None = None
    names: list[str] | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("panel values must be 2-D (stocks x times)")
        p, T = self.values.shape
        if not np.all(np.isfinite(self.values)):
            raise ValueError("panel values must be finite (no missing cells)")
        if self.deltas is None:
            self.deltas = np.ones((p, T))
        self.deltas = np.asarray(self.deltas, dtype=float)
        if self.deltas.shape != (p, T):
            raise ValueError("deltas shape must match values")
        if not np.all(self.deltas > 0):
            raise ValueError("deltas must be positive")
        if self.dates is not None:
            self.dates = np.asarray(self.dates, dtype="datetime64[D]")
            if self.dates.shape != (T,):
                raise ValueError("dates length must match the time axis")
            if T > 1 and not np.all(np.diff(self.dates).astype(int) > 0):
                raise ValueError("dates must be strictly increasing")
        if self.names is None:
            self.names = [f"s{i}" for i in range(p)]
        if len(self.names) != p:
            raise ValueError("names length must match the stock axis")

    @property
    def n_stocks(self) -> int:
        return self.values.shape[0]

    @property
    def n_times(self) -> int:
        return self.values.shape[1]

    def ranges(self) -> np.ndarray:
        """Per-stock max-minus-min of the returns, used to scale jump priors."""
        return self.values.max(axis=1) - self.values.min(axis=1)


@dataclass
class StockParams:
    """Static parameters of one stock."""

    mu: float
    phi: float
    sigma2_eta: float
    mu_xi: float = 0.0
    sigma2_xi: float = 1.0
    b: float = 0.0
    w: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        self.w = np.atleast_1d(np.asarray(self.w, dtype=float))
        if not -1.0 < self.phi < 1.0:
            raise ValueError("phi must lie in (-1, 1)")
        if self.sigma2_eta <= 0:
            raise ValueError("sigma2_eta must be positive")
        # zero is allowed as a degenerate point mass (simulation only)
        if self.sigma2_xi < 0:
            raise ValueError("sigma2_xi must be non-negative")


@dataclass
class FactorParams:
    """Shared intensity-factor parameters: K independent AR(1) factors."""

    alpha: np.ndarray
    lambda_star: float = 0.15

    def __post_init__(self) -> None:
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if self.alpha.size and not np.all(np.abs(self.alpha) < 1.0):
            raise ValueError("factor AR coefficients must lie in (-1, 1)")
        if not 0 < self.lambda_star:
            raise ValueError("lambda_star must be positive")

    @property
    def n_factors(self) -> int:
        return self.alpha.size


@dataclass
class LatentState:
    """All latent quantities of one sweep.

    h : (p, T+1) log-variance paths, index 0 is the pre-sample state.
    n : (p, T) integer jump counts.
    xi : per stock, a dict mapping time index -> array of the n_it
        individual jump sizes (only cells with n_it > 0 appear).
    xi_sums : (p, T) cached per-cell sums of xi.
    f : (K, T+1) factor paths (K may be 0).
    lam : (p, T) jump intensities.
    """

    h: np.ndarray
    n: np.ndarray
    xi: list[dict[int, np.ndarray]]
    xi_sums: np.ndarray
    f: np.ndarray
    lam: np.ndarray

    def validate(self) -> None:
        p, T1 = self.h.shape
        T = T1 - 1
        if self.n.shape != (p, T):
            raise ValueError("jump count shape must be (p, T)")
        if np.any(self.n < 0):
            raise ValueError("jump counts must be non-negative")
        if self.xi_sums.shape != (p, T):
            raise ValueError("xi_sums shape must be (p, T)")
        if self.lam.shape != (p, T):
            raise ValueError("lam shape must be (p, T)")
        if np.any(self.lam < 0):
            raise ValueError("intensities must be non-negative")
        if self.f.size and self.f.shape[1] != T1:
            raise ValueError("factor path length must be T+1")
        if len(self.xi) != p:
            raise ValueError("xi must hold one dict per stock")
        for i in range(p):
            for t, sizes in self.xi[i].items():
                if len(sizes) != self.n[i, t]:
                    raise ValueError("xi cell length must equal the jump count")
            nz = np.nonzero(self.n[i])[0]
            if set(nz.tolist()) != set(self.xi[i].keys()):
                raise ValueError("xi cells must exist exactly where n > 0")
            s = np.zeros(T)
            for t, sizes in self.xi[i].items():
                s[t] = sizes.sum()
            if not np.allclose(s, self.xi_sums[i]):
                raise ValueError("xi_sums out of sync with xi")


@dataclass
class PriorSpec:
    """Hyperparameters of every prior block.

    Jump-size hyperparameters are per stock and derived from the observed
    return range of each stock (see ``from_ranges``); everything else is
    shared.  Gamma laws are in shape/rate form, the inverse gamma is the
    law of 1/X for X ~ Gam(shape, scale_param).
    """

    mu_mean: float = 0.0
    mu_var: float = 10.0
    phi_beta_a: float = 20.0
    phi_beta_b: float = 1.5
    sigma2_eta_shape: float = 0.5
    sigma2_eta_rate: float = 0.5
    sigma2_xi_shape: float = 3.0
    sigma2_xi_scale: np.ndarray = field(default_factory=lambda: np.ones(1) / 18.0)
    mu_xi_var: np.ndarray = field(default_factory=lambda: 5.0 * np.ones(1))
    delta: float = 1.0
    c: float = 50.0
    lambda_star: float = 0.15
    w_var: float = 0.5
    b_mean: float = -5.0
    b_var: float = 1.0

    def __post_init__(self) -> None:
        self.sigma2_xi_scale = np.atleast_1d(np.asarray(self.sigma2_xi_scale, float))
        self.mu_xi_var = np.atleast_1d(np.asarray(self.mu_xi_var, float))
        for name in ("mu_var", "phi_beta_a", "phi_beta_b", "sigma2_eta_shape",
                     "sigma2_eta_rate", "sigma2_xi_shape", "delta", "c",
                     "lambda_star", "w_var", "b_var"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if np.any(self.sigma2_xi_scale <= 0) or np.any(self.mu_xi_var <= 0):
            raise ValueError("jump-size hyperparameters must be positive")

    @classmethod
    def from_ranges(cls, ranges: np.ndarray, **overrides) -> "PriorSpec":
        """Per-stock jump hyperparameters from return ranges r_i = max - min:
        mu_xi ~ N(0, 5 r_i^2), sigma2_xi ~ IGam(3, r_i^2 / 18)."""
        ranges = np.atleast_1d(np.asarray(ranges, dtype=float))
        if np.any(ranges <= 0):
            raise ValueError("return ranges must be positive")
        return cls(
            sigma2_xi_scale=ranges**2 / 18.0,
            mu_xi_var=5.0 * ranges**2,
            **overrides,
        )

    @classmethod
    def from_panel(cls, panel: ReturnsPanel, **overrides) -> "PriorSpec":
        return cls.from_ranges(panel.ranges(), **overrides)


# ---------------------------------------------------------------------------
# densities


def norm_logpdf(x, mean, var):
    """Element-wise log N(x | mean, var); -inf where the variance overflows."""
    x = np.asarray(x, dtype=float)
    var = np.asarray(var, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)
    return out


def intensity_from_factors(b: np.ndarray, w: np.ndarray, f: np.ndarray,
                           lambda_star: float) -> np.ndarray:
    """Intensities lam_it = lambda_star / (1 + exp(-(b_i + w_i . f_t))).

    b : (p,), w : (p, K), f : (K, T+1); only f[:, 1:] carries observations.
    Returns a (p, T) array with entries in (0, lambda_star).
    """
    b = np.atleast_1d(np.asarray(b, dtype=float))
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w.reshape(b.size, -1)
    T = f.shape[1] - 1
    y = np.broadcast_to(b[:, None], (b.size, T)).copy()
    if w.size and f.size:
        y += w @ f[:, 1:]
    return lambda_star * sigmoid(y)


def sigmoid(y: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    pos = y >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-y[pos]))
    ey = np.exp(y[~pos])
    out[~pos] = ey / (1.0 + ey)
    return out


def nb_marginal_logpmf(n, delta: float, c: float, delta_t=1.0):
    """Marginal log-pmf of a jump count whose intensity is Gam(delta, c).

    p(n) = Gamma(delta+n) / (Gamma(delta) n!) beta^delta (1-beta)^n with
    beta = c / (c + delta_t).  Vectorized in n and delta_t.
    """
    n = np.asarray(n)
    if np.any(n < 0):
        raise ValueError("counts must be non-negative")
    delta_t = np.asarray(delta_t, dtype=float)
    log_beta = np.log(c) - np.log(c + delta_t)
    log_1mbeta = np.log(delta_t) - np.log(c + delta_t)
    return (gammaln(delta + n) - gammaln(delta) - gammaln(n + 1)
            + delta * log_beta + n * log_1mbeta)


def cell_loglik_marginal(r, h, n, mu_xi: float, sigma2_xi: float):
    """log p(r | h, n) with jump sizes integrated out:
    N(r | n mu_xi, exp(h) + n sigma2_xi)."""
    n = np.asarray(n, dtype=float)
    with np.errstate(over="ignore"):
        var = np.exp(np.asarray(h, dtype=float)) + n * sigma2_xi
    return norm_logpdf(r, n * mu_xi, var)


# prior log-densities; all return -inf off support


def _beta_logpdf(x, a, b):
    if not 0.0 < x < 1.0:
        return -np.inf
    return (gammaln(a + b) - gammaln(a) - gammaln(b)
            + (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x))


def log_prior_phi(phi: float, prior: PriorSpec) -> float:
    """(phi+1)/2 ~ Beta(a, b); density includes the 1/2 change of variables."""
    if not -1.0 < phi < 1.0:
        return -np.inf
    return _beta_logpdf((phi + 1.0) / 2.0, prior.phi_beta_a, prior.phi_beta_b) - math.log(2.0)


def log_prior_sigma2_eta(s2: float, prior: PriorSpec) -> float:
    if s2 <= 0:
        return -np.inf
    a, b = prior.sigma2_eta_shape, prior.sigma2_eta_rate
    return a * math.log(b) - gammaln(a) + (a - 1.0) * math.log(s2) - b * s2


def log_prior_mu(mu: float, prior: PriorSpec) -> float:
    return float(norm_logpdf(mu, prior.mu_mean, prior.mu_var))


def log_prior_mu_xi(mu_xi: float, prior: PriorSpec, i: int) -> float:
    return float(norm_logpdf(mu_xi, 0.0, prior.mu_xi_var[i]))


def log_prior_sigma2_xi(s2: float, prior: PriorSpec, i: int) -> float:
    if s2 <= 0:
        return -np.inf
    a = prior.sigma2_xi_shape
    b = prior.sigma2_xi_scale[i]
    return a * math.log(b) - gammaln(a) - (a + 1.0) * math.log(s2) - b / s2


def log_prior_loadings(b: float, w: np.ndarray, prior: PriorSpec) -> float:
    lp = float(norm_logpdf(b, prior.b_mean, prior.b_var))
    if w.size:
        lp += float(norm_logpdf(w, 0.0, prior.w_var).sum())
    return lp


def log_prior_stock(params: StockParams, prior: PriorSpec, i: int = 0,
                    include_jumps: bool = True,
                    include_loadings: bool = False) -> float:
    """Sum of the stock-level prior log-densities; -inf outside supports."""
    lp = (log_prior_mu(params.mu, prior)
          + log_prior_phi(params.phi, prior)
          + log_prior_sigma2_eta(params.sigma2_eta, prior))
    if include_jumps:
        lp += (log_prior_mu_xi(params.mu_xi, prior, i)
               + log_prior_sigma2_xi(params.sigma2_xi, prior, i))
    if include_loadings:
        lp += log_prior_loadings(params.b, params.w, prior)
    return lp


# ---------------------------------------------------------------------------
# prior elicitation for the intensity level


class ModeSearchError(RuntimeError):
    """Root-finding on the intensity-prior mode equation failed."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature of the induced intensity prior failed."""


@dataclass
class IntensityPrior:
    """Implied stationary prior of a single intensity lam_it."""

    mean: float
    var: float
    mode: float
    mu_y: float
    sigma2_y: float


def elicit_intensity_prior(mu_b: float, sigma2_b: float, sigma2_w: float,
                           n_factors: int, lambda_star: float = 0.15) -> IntensityPrior:
    """Moments and mode of the induced prior on lam = lambda_star * sigmoid(y).

    Marginalizing loadings, intercept and the stationary factors (at AR
    coefficients 0) gives y ~ N(mu_b, K sigma2_w + sigma2_b), i.e. a
    logit-normal on (0, lambda_star).  The mode solves
    log(lam/(lambda_star - lam)) = (lambda_star mu_y
    + sigma2_y (2 lam - lambda_star)) / lambda_star; with several roots the
    one maximizing the density is returned.  Moments come from adaptive
    quadrature on (0, lambda_star) anchored at the mode.
    """
    if n_factors < 1:
        raise ValueError("n_factors must be at least 1")
    if sigma2_b <= 0 or sigma2_w <= 0 or lambda_star <= 0:
        raise ValueError("variances and lambda_star must be positive")
    mu_y = mu_b
    s2y = n_factors * sigma2_w + sigma2_b
    sy = math.sqrt(s2y)
    ls = lambda_star

    def sig1(y: float) -> float:
        return 1.0 / (1.0 + math.exp(-y)) if y >= 0 else math.exp(y) / (1.0 + math.exp(y))

    # mode first: the equation rewritten in y-space is
    # y = mu_y + s2y (2 sigmoid(y) - 1), with every root inside
    # [mu_y - s2y, mu_y + s2y]
    def gap(yv: float) -> float:
        return yv - mu_y - s2y * (2.0 * sig1(yv) - 1.0)

    from scipy.optimize import brentq

    grid = np.linspace(mu_y - s2y - 1.0, mu_y + s2y + 1.0, 4001)
    vals = np.array([gap(g) for g in grid])
    roots = [float(brentq(gap, grid[j], grid[j + 1], xtol=1e-15))
             for j in range(len(grid) - 1)
             if vals[j] == 0.0 or vals[j] * vals[j + 1] < 0]
    if not roots:
        raise ModeSearchError("no stationary point of the intensity prior found")

    def log_density_y(yv: float) -> float:
        lamv = ls * sig1(yv)
        return (float(norm_logpdf(yv, mu_y, s2y))
                - math.log(lamv) - math.log(ls - lamv))

    best = max(roots, key=log_density_y)
    if abs(gap(best)) > 1e-10:
        raise ModeSearchError("mode equation residual exceeds 1e-10")
    mode = ls * sig1(best)

    def density(lam: float) -> float:
        if lam <= 0.0 or lam >= ls:
            return 0.0
        y = math.log(lam / (ls - lam))
        return math.exp(float(norm_logpdf(y, mu_y, s2y))) * ls / (lam * (ls - lam))

    from scipy.integrate import quad

    # waypoints at the mode and a few latent-scale quantiles keep the
    # subdivision near the spike
    pts = sorted({mode} | {ls * sig1(mu_y + k * sy) for k in (-4, -2, -1, 0, 1, 2, 4)})
    pts = [p for p in pts if 0.0 < p < ls]

    def integrate(f) -> float:
        val, err = quad(f, 0.0, ls, points=pts, limit=500, epsabs=0.0, epsrel=1e-8)
        if not np.isfinite(val) or err > 1e-6 * max(abs(val), 1e-300):
            raise QuadratureError("intensity-prior quadrature did not converge")
        return val

    norm = integrate(density)
    if abs(norm - 1.0) > 1e-6:
        raise QuadratureError(f"intensity prior integrates to {norm}, not 1")
    mean = integrate(lambda lam: lam * density(lam)) / norm
    second = integrate(lambda lam: lam * lam * density(lam)) / norm
    return IntensityPrior(mean=mean, var=second - mean**2, mode=mode,
                          mu_y=mu_y, sigma2_y=s2y)
