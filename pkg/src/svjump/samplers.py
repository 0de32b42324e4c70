"""Conditional updates composing the panel MCMC sweep.

Per stock: an auxiliary gradient-based Metropolis update of the
log-variance path jointly with its AR parameters (jump sizes integrated
out), a Gaussian draw of the level, an interweaved non-centred re-update
of the AR block, exact rejection sampling of the per-cell jump counts,
the closed-form jump-size conditional, and conjugate draws of the
jump-size mean/variance.  Shared: the same auxiliary gradient machinery
on the factor paths plus an interweaved re-update of the factor AR
coefficients, and random-walk moves of the intensity loadings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter
from scipy.special import gammaln

from . import model
from .ar1 import Ar1Precision, marginal_loglik_evidence, ridged_chol
from .model import LOG_2PI, PriorSpec

# ---------------------------------------------------------------------------
# adaptive Metropolis scales


@dataclass
class AdaptiveScale:
    """One Robbins-Monro tuned proposal scale, frozen after burn-in."""

    value: float
    target: float
    lo: float = 1e-12
    hi: float = 1e6
    step: int = 0
    frozen: bool = False
    trials: int = 0
    accepts: int = 0

    @property
    def rate(self) -> float:
        return self.accepts / max(self.trials, 1)

    def update(self, accepted: bool) -> None:
        self.trials += 1
        if accepted:
            self.accepts += 1
        if self.frozen:
            return
        self.step += 1
        eta = self.step ** -0.6
        self.value = math.exp(math.log(self.value)
                              + eta * ((1.0 if accepted else 0.0) - self.target))
        if not self.lo <= self.value <= self.hi:
            raise RuntimeError(
                f"proposal scale diverged to {self.value:g} during adaptation")


@dataclass
class AuxTuning:
    """Tuning state of one auxiliary gradient-based sampler: the
    discretization step gamma of the path move (target 55%) and the
    random-walk scale kappa of the joint hyperparameter move (target 25%).
    """

    gamma: AdaptiveScale = field(default_factory=lambda: AdaptiveScale(0.1, 0.55))
    kappa: AdaptiveScale = field(default_factory=lambda: AdaptiveScale(0.05, 0.25))

    def freeze(self) -> None:
        self.gamma.frozen = True
        self.kappa.frozen = True


# ---------------------------------------------------------------------------
# jump-count rejection sampler

_MAX_PMF_COLUMNS = 200
# a step down this large ends the envelope body; keeps the geometric
# tail parameter at or above 1e-12 so its mass stays finite
_DESCENT_THRESHOLD = math.log1p(-1e-12)


def _count_logpmf_columns(r, h, lam_dt, mu_xi, s2_xi, n_max):
    """Unnormalized log pmf of the count conditional, columns n = 0..n_max."""
    n = np.arange(n_max + 1, dtype=float)
    var = np.exp(np.minimum(h, 700.0))[:, None] + n[None, :] * s2_xi
    ll = -0.5 * (LOG_2PI + np.log(var)
                 + (r[:, None] - n[None, :] * mu_xi) ** 2 / var)
    logpois = (n[None, :] * np.log(lam_dt)[:, None] - lam_dt[:, None]
               - gammaln(n + 1.0)[None, :])
    return ll + logpois


def _cell_logpmf(r, h, lam_dt, mu_xi, s2_xi, n):
    n = np.asarray(n, dtype=float)
    var = np.exp(np.minimum(h, 700.0)) + n * s2_xi
    ll = -0.5 * (LOG_2PI + np.log(var) + (r - n * mu_xi) ** 2 / var)
    return ll + n * np.log(lam_dt) - lam_dt - gammaln(n + 1.0)


@dataclass
class RejectionStats:
    """Diagnostics of the count sampler: draws counts returned samples,
    tail_proposals counts geometric-tail proposals (including rejected
    ones), tail_draws the samples that went through the tail branch."""

    draws: int = 0
    tail_proposals: int = 0
    tail_draws: int = 0


def sample_jump_counts_row(rng: np.random.Generator, r: np.ndarray, h: np.ndarray,
                           lam_dt: np.ndarray, mu_xi: float, s2_xi: float,
                           stats: RejectionStats | None = None) -> np.ndarray:
    """Exact draw of the jump counts for a row of cells.

    Each cell's target is p(n) prop N(r | n mu_xi, e^h + n s2_xi)
    Poisson(n | lam_dt).  The proposal matches p exactly below a split
    index m past the mode and decays geometrically above it; the body is
    drawn by inversion, the tail by accept/reject against the geometric
    cap, valid because the target is log-concave from n = 1 on.
    """
    r = np.asarray(r, float)
    h = np.asarray(h, float)
    lam_dt = np.asarray(lam_dt, float)
    T = r.size
    out = np.zeros(T, dtype=np.int64)
    live = lam_dt > 0.0  # a zero intensity forces a zero count
    if not np.all(live):
        if stats is not None:
            stats.draws += int((~live).sum())
        if np.any(live):
            out[live] = sample_jump_counts_row(rng, r[live], h[live],
                                               lam_dt[live], mu_xi, s2_xi, stats)
        return out
    if T == 0:
        return out
    if stats is not None:
        stats.draws += T

    # scan upward for each cell's split m: the first clear descent marks
    # the mode, m is the next index with one (near-flat stretches widen m)
    L = _count_logpmf_columns(r, h, lam_dt, mu_xi, s2_xi, 8)
    mode_found = np.full(T, -1)
    m = np.full(T, -1)
    k = 0
    while True:
        while k + 1 >= L.shape[1]:
            new_max = 2 * (L.shape[1] - 1)
            if new_max > _MAX_PMF_COLUMNS:
                raise RuntimeError("count pmf split point beyond the scan cap")
            L = _count_logpmf_columns(r, h, lam_dt, mu_xi, s2_xi, new_max)
        desc = (L[:, k + 1] - L[:, k]) < _DESCENT_THRESHOLD
        mode_here = (mode_found < 0) & desc
        mode_found[mode_here] = k
        split_here = (mode_found >= 0) & (mode_found < k) & (m < 0) & desc
        m[split_here] = k
        if np.all(m >= 0):
            break
        k += 1
    while L.shape[1] < int(m.max()) + 2:
        L = _count_logpmf_columns(r, h, lam_dt, mu_xi, s2_xi, 2 * (L.shape[1] - 1))

    rows = np.arange(T)
    body = np.arange(L.shape[1])[None, :] < m[:, None]
    ref = np.maximum(np.where(body, L, -np.inf).max(axis=1), L[rows, m])
    w = np.exp(L - ref[:, None])
    body_w = np.where(body, w, 0.0)
    cum = np.cumsum(body_w, axis=1)
    body_sum = cum[:, -1]
    log_pm = L[rows, m] - ref
    log_ratio = np.minimum(L[rows, m + 1] - L[rows, m], _DESCENT_THRESHOLD)
    tail_sum = np.exp(log_pm) / -np.expm1(log_ratio)
    c_total = body_sum + tail_sum

    # the proposal is exact on the body, so a body pick is final; a
    # rejected tail pick restarts from the branch choice
    active = rows
    while active.size:
        tgt = rng.random(active.size) * c_total[active]
        in_body = tgt <= body_sum[active]
        picked = active[in_body]
        out[picked] = (cum[picked] < tgt[in_body, None]).sum(axis=1)

        tact = active[~in_body]
        if tact.size == 0:
            break
        if stats is not None:
            stats.tail_proposals += tact.size
        lr = log_ratio[tact]
        offset = np.floor(np.log(1.0 - rng.random(tact.size)) / lr)
        n_prop = m[tact] + offset.astype(np.int64)
        log_env = log_pm[tact] + offset * lr
        log_target = _cell_logpmf(r[tact], h[tact], lam_dt[tact],
                                  mu_xi, s2_xi, n_prop) - ref[tact]
        assert np.all(log_env >= log_target
                      - 1e-9 * np.maximum(1.0, np.abs(log_target))), \
            "geometric envelope fails to dominate the count pmf"
        acc = np.log(1.0 - rng.random(tact.size)) + log_env <= log_target
        out[tact[acc]] = n_prop[acc]
        if stats is not None:
            stats.tail_draws += int(acc.sum())
        active = tact[~acc]
    return out


def sample_jump_count(rng: np.random.Generator, r: float, h: float, lam_dt: float,
                      mu_xi: float, s2_xi: float,
                      stats: RejectionStats | None = None) -> int:
    """Single-cell version of the count sampler."""
    return int(sample_jump_counts_row(rng, np.array([r]), np.array([h]),
                                      np.array([lam_dt]), mu_xi, s2_xi, stats)[0])


def jump_count_logpmf(r: float, h: float, lam_dt: float, mu_xi: float,
                      s2_xi: float, n_max: int) -> np.ndarray:
    """Log pmf of the count conditional normalized over 0..n_max (for
    tests and diagnostics; mass beyond n_max is ignored)."""
    L = _count_logpmf_columns(np.array([r]), np.array([h]), np.array([lam_dt]),
                              mu_xi, s2_xi, n_max)[0]
    ref = L.max()
    return L - ref - math.log(np.exp(L - ref).sum())


# ---------------------------------------------------------------------------
# jump sizes and their hyperparameters


def sample_jump_sizes(rng: np.random.Generator, r: float, h: float, n: int,
                      mu_xi: float, s2_xi: float) -> np.ndarray:
    """Exact Gaussian draw of the n individual jump sizes in one cell.

    The conditional is N(mean 1, s2_xi I - s2_xi^2/(e^h + n s2_xi) 11')
    with mean = (mu_xi e^h + r s2_xi)/(e^h + n s2_xi); sampled via a
    rank-one correction of iid draws, never forming the n x n matrix.
    """
    if n < 1:
        raise ValueError("need at least one jump")
    s = math.exp(h) if h < 700.0 else math.inf
    if math.isinf(s):
        mean, q = mu_xi, 1.0
    else:
        denom = s + n * s2_xi
        mean = (mu_xi * s + r * s2_xi) / denom
        q = math.sqrt(s / denom)
    a = (1.0 - q) / n
    z = rng.standard_normal(n) * math.sqrt(s2_xi)
    return mean + z - a * z.sum()


def sample_mu_xi(rng: np.random.Generator, total_jumps: float, xi_total: float,
                 s2_xi: float, prior: PriorSpec, i: int) -> float:
    """Conjugate Gaussian conditional of the jump-size mean."""
    v0 = float(prior.mu_xi_var[i])
    denom = v0 * total_jumps + s2_xi
    return float(rng.normal(v0 * xi_total / denom,
                            math.sqrt(v0 * s2_xi / denom)))


def sample_sigma2_xi(rng: np.random.Generator, total_jumps: float,
                     sq_dev_total: float, prior: PriorSpec, i: int) -> float:
    """Conjugate inverse-gamma conditional of the jump-size variance."""
    shape = prior.sigma2_xi_shape + 0.5 * total_jumps
    scale = float(prior.sigma2_xi_scale[i]) + 0.5 * sq_dev_total
    return float(scale / rng.gamma(shape, 1.0))


# ---------------------------------------------------------------------------
# volatility block


def _vol_loglik_and_grad(h: np.ndarray, r: np.ndarray, n: np.ndarray,
                         mu_xi: float, s2_xi: float):
    """Log-density of the returns given the path (sizes integrated out)
    and its gradient in the path; index 0 carries no observation."""
    hh = h[1:]
    with np.errstate(over="ignore", invalid="ignore"):
        eh = np.exp(hh)
        var = np.maximum(eh + n * s2_xi, 1e-300)
        resid2 = (r - n * mu_xi) ** 2
        g = float(np.sum(-0.5 * (LOG_2PI + np.log(var) + resid2 / var)))
        grad = np.zeros_like(h)
        grad[1:] = 0.5 * eh * (resid2 / var**2 - 1.0 / var)
    return g, grad


def _logit_ar(phi: float) -> float:
    return math.log((1.0 + phi) / (1.0 - phi))


def _inv_logit_ar(x: float) -> float:
    return math.tanh(0.5 * x)


@dataclass
class StepDiagnostics:
    accept_path: bool = False
    accept_joint: bool = False
    nonfinite_aborts: int = 0


def agrad_update_volatility(rng: np.random.Generator, h: np.ndarray, phi: float,
                            sigma2_eta: float, mu: float, r: np.ndarray,
                            n: np.ndarray, mu_xi: float, s2_xi: float,
                            prior: PriorSpec, tune: AuxTuning,
                            update_hyperparams: bool = True
                            ) -> tuple[np.ndarray, float, float, StepDiagnostics]:
    """Two auxiliary gradient-based Metropolis steps on one volatility block.

    Both steps lift the state with a forward Gaussian draw around a
    half-gradient shift, then propose the path from the conjugate Gaussian
    given that draw.  Step one refreshes the path alone; step two also
    proposes (phi, sigma2_eta) by a random walk on (log-odds, log) scale,
    accepted with the marginal evidence ratio of the lifted draw, the
    priors and the transform Jacobian.  A non-finite likelihood or
    gradient aborts the step as a rejection.  update_hyperparams=False
    runs the path-only step and skips the joint one (used when the AR
    parameters are pinned, e.g. bridging sweeps).
    """
    diag = StepDiagnostics()
    T1 = h.size
    gamma = tune.gamma.value

    def aux_draw(cur_h, grad):
        return (cur_h + 0.5 * gamma * grad
                + math.sqrt(0.5 * gamma) * rng.standard_normal(T1))

    def u_term(z, cur_h, grad):
        return float((z - cur_h - 0.25 * gamma * grad) @ grad)

    # path-only step
    g0, grad0 = _vol_loglik_and_grad(h, r, n, mu_xi, s2_xi)
    if np.isfinite(g0) and np.all(np.isfinite(grad0)):
        z = aux_draw(h, grad0)
        prec = Ar1Precision(phi, sigma2_eta, T1, mean_level=mu)
        chol = ridged_chol(prec, 2.0 / gamma)
        lin = prec.linear_term() + (2.0 / gamma) * z
        h_prop = chol.solve(lin) + chol.solve_lt(rng.standard_normal(T1))
        g1, grad1 = _vol_loglik_and_grad(h_prop, r, n, mu_xi, s2_xi)
        if np.isfinite(g1) and np.all(np.isfinite(grad1)):
            log_acc = g1 - g0 + u_term(z, h_prop, grad1) - u_term(z, h, grad0)
            if math.log(1.0 - rng.random()) < log_acc:
                h = h_prop
                diag.accept_path = True
        else:
            diag.nonfinite_aborts += 1
    else:
        diag.nonfinite_aborts += 1
    tune.gamma.update(diag.accept_path)
    if not update_hyperparams:
        return h, phi, sigma2_eta, diag

    # joint step for (path, phi, sigma2_eta)
    kappa = tune.kappa.value
    g0, grad0 = _vol_loglik_and_grad(h, r, n, mu_xi, s2_xi)
    if np.isfinite(g0) and np.all(np.isfinite(grad0)):
        z = aux_draw(h, grad0)
        step = math.sqrt(kappa) * rng.standard_normal(2)
        phi_prop = _inv_logit_ar(_logit_ar(phi) + step[0])
        s2_prop = sigma2_eta * math.exp(step[1])
        ok = (abs(phi_prop) < 1.0 - 1e-12 and np.isfinite(s2_prop) and s2_prop > 0)
        if ok:
            prec_cur = Ar1Precision(phi, sigma2_eta, T1, mean_level=mu)
            prec_prop = Ar1Precision(phi_prop, s2_prop, T1, mean_level=mu)
            chol_cur = ridged_chol(prec_cur, 2.0 / gamma)
            chol_prop = ridged_chol(prec_prop, 2.0 / gamma)
            lin = prec_prop.linear_term() + (2.0 / gamma) * z
            h_prop = (chol_prop.solve(lin)
                      + chol_prop.solve_lt(rng.standard_normal(T1)))
            g1, grad1 = _vol_loglik_and_grad(h_prop, r, n, mu_xi, s2_xi)
            if np.isfinite(g1) and np.all(np.isfinite(grad1)):
                ev_prop = marginal_loglik_evidence(z, prec_prop, 0.5 * gamma,
                                                   mean=mu, chol=chol_prop)
                ev_cur = marginal_loglik_evidence(z, prec_cur, 0.5 * gamma,
                                                  mean=mu, chol=chol_cur)
                # d(phi, sigma2)/d(log-odds, log) = (1 - phi^2)/2 * sigma2
                log_jac = (math.log1p(-phi_prop**2) + math.log(s2_prop)
                           - math.log1p(-phi**2) - math.log(sigma2_eta))
                log_acc = (g1 - g0
                           + u_term(z, h_prop, grad1) - u_term(z, h, grad0)
                           + ev_prop - ev_cur
                           + model.log_prior_phi(phi_prop, prior)
                           - model.log_prior_phi(phi, prior)
                           + model.log_prior_sigma2_eta(s2_prop, prior)
                           - model.log_prior_sigma2_eta(sigma2_eta, prior)
                           + log_jac)
                if math.log(1.0 - rng.random()) < log_acc:
                    h, phi, sigma2_eta = h_prop, phi_prop, s2_prop
                    diag.accept_joint = True
            else:
                diag.nonfinite_aborts += 1
    else:
        diag.nonfinite_aborts += 1
    tune.kappa.update(diag.accept_joint)
    return h, phi, sigma2_eta, diag


def sample_mu_volatility(rng: np.random.Generator, h: np.ndarray, phi: float,
                         sigma2_eta: float, prior: PriorSpec) -> float:
    """Gaussian full conditional of the volatility level."""
    T = h.size - 1
    opf = 1.0 - phi
    prec_data = ((1.0 - phi**2) + T * opf**2) / sigma2_eta
    lin_data = ((1.0 - phi**2) * h[0]
                + opf * float(np.sum(h[1:] - phi * h[:-1]))) / sigma2_eta
    prec_post = prec_data + 1.0 / prior.mu_var
    lin_post = lin_data + prior.mu_mean / prior.mu_var
    return float(rng.normal(lin_post / prec_post, math.sqrt(1.0 / prec_post)))


@dataclass
class AsisVolScales:
    mu: AdaptiveScale = field(default_factory=lambda: AdaptiveScale(0.1, 0.25))
    log_s2: AdaptiveScale = field(default_factory=lambda: AdaptiveScale(0.1, 0.25))

    def freeze(self) -> None:
        self.mu.frozen = True
        self.log_s2.frozen = True


def asis_volatility_move(rng: np.random.Generator, h: np.ndarray, mu: float,
                         phi: float, sigma2_eta: float, r: np.ndarray,
                         n: np.ndarray, mu_xi: float, s2_xi: float,
                         prior: PriorSpec, scales: AsisVolScales
                         ) -> tuple[np.ndarray, float, float, float, np.ndarray]:
    """Interweaved re-update of (mu, sigma2_eta, phi) against the
    non-centred path htil = (h - mu)/sigma_eta, then back-transform.

    mu and sigma2_eta move by random walks against the observation
    density, whose variance is n s2_xi + exp(mu + sigma_eta htil); phi by
    an independence Gaussian proposal fitted to the lag regression of
    htil.  Returns the rebuilt path, the three parameters and a 0/1
    accept vector (mu, sigma2_eta, phi).
    """
    htil = (h - mu) / math.sqrt(sigma2_eta)
    ht_obs = htil[1:]

    def obs_loglik(mu_, s2_):
        with np.errstate(over="ignore", invalid="ignore"):
            var = n * s2_xi + np.exp(mu_ + math.sqrt(s2_) * ht_obs)
            var = np.maximum(var, 1e-300)
            return float(np.sum(-0.5 * (LOG_2PI + np.log(var)
                                        + (r - n * mu_xi) ** 2 / var)))

    accepts = np.zeros(3)

    # level
    mu_prop = mu + scales.mu.value * rng.standard_normal()
    log_acc = (obs_loglik(mu_prop, sigma2_eta) - obs_loglik(mu, sigma2_eta)
               + model.log_prior_mu(mu_prop, prior) - model.log_prior_mu(mu, prior))
    if math.log(1.0 - rng.random()) < log_acc:
        mu = mu_prop
        accepts[0] = 1
    scales.mu.update(bool(accepts[0]))

    # innovation variance, random walk on the log scale
    s2_prop = sigma2_eta * math.exp(scales.log_s2.value * rng.standard_normal())
    if np.isfinite(s2_prop) and s2_prop > 0:
        log_acc = (obs_loglik(mu, s2_prop) - obs_loglik(mu, sigma2_eta)
                   + model.log_prior_sigma2_eta(s2_prop, prior)
                   - model.log_prior_sigma2_eta(sigma2_eta, prior)
                   + math.log(s2_prop) - math.log(sigma2_eta))
        if math.log(1.0 - rng.random()) < log_acc:
            sigma2_eta = s2_prop
            accepts[1] = 1
    scales.log_s2.update(bool(accepts[1]))

    # persistence, independence proposal from the lag regression of the
    # non-centred path (prior x AR density target, no observation term)
    denom = float(htil[:-1] @ htil[:-1])
    if denom > 0.0:
        prop_mean = float(htil[1:] @ htil[:-1]) / denom
        prop_var = 1.0 / denom
        phi_prop = float(rng.normal(prop_mean, math.sqrt(prop_var)))

        def phi_target(ph):
            if not -1.0 < ph < 1.0:
                return -np.inf
            lp = model.log_prior_phi(ph, prior)
            lp += 0.5 * math.log1p(-ph**2) - 0.5 * (1.0 - ph**2) * htil[0] ** 2
            resid = htil[1:] - ph * htil[:-1]
            return lp - 0.5 * float(resid @ resid)

        log_acc = (phi_target(phi_prop) - phi_target(phi)
                   - float(model.norm_logpdf(phi_prop, prop_mean, prop_var))
                   + float(model.norm_logpdf(phi, prop_mean, prop_var)))
        if math.log(1.0 - rng.random()) < log_acc:
            phi = phi_prop
            accepts[2] = 1

    h = mu + math.sqrt(sigma2_eta) * htil
    return h, mu, phi, sigma2_eta, accepts


# ---------------------------------------------------------------------------
# factor block


def factor_poisson_loglik(f: np.ndarray, b: np.ndarray, w: np.ndarray,
                          n_mat: np.ndarray, dt_mat: np.ndarray,
                          lambda_star: float) -> float:
    """Poisson log-likelihood of the counts given factor paths and loadings."""
    lam = model.intensity_from_factors(b, w, f, lambda_star)
    loglam = np.log(np.maximum(lam, 1e-300))
    return float(np.sum(n_mat * loglam - dt_mat * lam))


def _factor_loglik_and_grad(f, b, w, n_mat, dt_mat, lambda_star):
    lam = model.intensity_from_factors(b, w, f, lambda_star)
    loglam = np.log(np.maximum(lam, 1e-300))
    g = float(np.sum(n_mat * loglam - dt_mat * lam))
    # d/dy of (n log lam - dt lam) for lam = lambda_star sigmoid(y)
    dy = (n_mat - dt_mat * lam) * (1.0 - lam / lambda_star)
    grad = np.zeros_like(f)
    grad[:, 1:] = w.T @ dy
    return g, grad


def agrad_update_factors(rng: np.random.Generator, f: np.ndarray,
                         alpha: np.ndarray, b: np.ndarray, w: np.ndarray,
                         n_mat: np.ndarray, dt_mat: np.ndarray,
                         lambda_star: float, tune: AuxTuning,
                         update_hyperparams: bool = True
                         ) -> tuple[np.ndarray, np.ndarray, StepDiagnostics]:
    """Auxiliary gradient-based update of the factor paths, then a joint
    move of (paths, AR coefficients); mirrors the volatility block with
    unit innovation variance, zero level and a flat prior on each AR
    coefficient over (-1, 1)."""
    diag = StepDiagnostics()
    K, T1 = f.shape
    gamma = tune.gamma.value

    def aux_draw(cur_f, grad):
        return (cur_f + 0.5 * gamma * grad
                + math.sqrt(0.5 * gamma) * rng.standard_normal((K, T1)))

    def u_term(z, cur_f, grad):
        return float(np.sum((z - cur_f - 0.25 * gamma * grad) * grad))

    def propose_paths(z, alphas):
        out = np.empty_like(f)
        for k in range(K):
            prec = Ar1Precision(float(alphas[k]), 1.0, T1)
            chol = ridged_chol(prec, 2.0 / gamma)
            out[k] = (chol.solve((2.0 / gamma) * z[k])
                      + chol.solve_lt(rng.standard_normal(T1)))
        return out

    def evidence(z, alphas):
        tot = 0.0
        for k in range(K):
            prec = Ar1Precision(float(alphas[k]), 1.0, T1)
            tot += marginal_loglik_evidence(z[k], prec, 0.5 * gamma)
        return tot

    # path-only step
    g0, grad0 = _factor_loglik_and_grad(f, b, w, n_mat, dt_mat, lambda_star)
    z = aux_draw(f, grad0)
    f_prop = propose_paths(z, alpha)
    g1, grad1 = _factor_loglik_and_grad(f_prop, b, w, n_mat, dt_mat, lambda_star)
    log_acc = g1 - g0 + u_term(z, f_prop, grad1) - u_term(z, f, grad0)
    if math.log(1.0 - rng.random()) < log_acc:
        f = f_prop
        diag.accept_path = True
    tune.gamma.update(diag.accept_path)
    if not update_hyperparams:
        return f, alpha, diag

    # joint step for (paths, AR coefficients)
    kappa = tune.kappa.value
    g0, grad0 = _factor_loglik_and_grad(f, b, w, n_mat, dt_mat, lambda_star)
    z = aux_draw(f, grad0)
    alpha_hat = np.array([_logit_ar(a) for a in alpha])
    alpha_prop = np.array([_inv_logit_ar(x) for x in
                           alpha_hat + math.sqrt(kappa) * rng.standard_normal(K)])
    if np.all(np.abs(alpha_prop) < 1.0 - 1e-12):
        f_prop = propose_paths(z, alpha_prop)
        g1, grad1 = _factor_loglik_and_grad(f_prop, b, w, n_mat, dt_mat, lambda_star)
        log_jac = float(np.sum(np.log1p(-alpha_prop**2) - np.log1p(-alpha**2)))
        log_acc = (g1 - g0 + u_term(z, f_prop, grad1) - u_term(z, f, grad0)
                   + evidence(z, alpha_prop) - evidence(z, alpha) + log_jac)
        if math.log(1.0 - rng.random()) < log_acc:
            f, alpha = f_prop, alpha_prop
            diag.accept_joint = True
    tune.kappa.update(diag.accept_joint)
    return f, alpha, diag


def whiten_factors(f: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Innovations of the factor recursion: gam_0 = sqrt(1 - a^2) f_0,
    gam_t = f_t - a f_{t-1}; iid standard normal under the prior for
    every admissible a."""
    gam = np.empty_like(f)
    gam[:, 0] = np.sqrt(1.0 - alpha**2) * f[:, 0]
    gam[:, 1:] = f[:, 1:] - alpha[:, None] * f[:, :-1]
    return gam


def rebuild_factors(gam: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Inverse of whiten_factors."""
    f = np.empty_like(gam)
    for k in range(alpha.size):
        x = gam[k].copy()
        x[0] = gam[k, 0] / math.sqrt(1.0 - alpha[k] ** 2)
        f[k] = lfilter([1.0], [1.0, -alpha[k]], x)
    return f


def asis_factor_move(rng: np.random.Generator, f: np.ndarray, alpha: np.ndarray,
                     b: np.ndarray, w: np.ndarray, n_mat: np.ndarray,
                     dt_mat: np.ndarray, lambda_star: float,
                     scale: AdaptiveScale) -> tuple[np.ndarray, np.ndarray, bool]:
    """Interweaved AR-coefficient move holding the factor innovations
    fixed: random walk on log-odds(alpha), likelihood evaluated on the
    rebuilt paths.  The innovations are standard normal regardless of
    alpha, so only the Poisson term and the transform Jacobian enter."""
    gam = whiten_factors(f, alpha)
    alpha_hat = np.array([_logit_ar(a) for a in alpha])
    alpha_prop = np.array([_inv_logit_ar(x) for x in
                           alpha_hat + scale.value * rng.standard_normal(alpha.size)])
    accepted = False
    if np.all(np.abs(alpha_prop) < 1.0 - 1e-12):
        f_prop = rebuild_factors(gam, alpha_prop)
        log_jac = float(np.sum(np.log1p(-alpha_prop**2) - np.log1p(-alpha**2)))
        log_acc = (factor_poisson_loglik(f_prop, b, w, n_mat, dt_mat, lambda_star)
                   - factor_poisson_loglik(f, b, w, n_mat, dt_mat, lambda_star)
                   + log_jac)
        if math.log(1.0 - rng.random()) < log_acc:
            f, alpha, accepted = f_prop, alpha_prop, True
    scale.update(accepted)
    return f, alpha, accepted


def update_loadings(rng: np.random.Generator, b: float, w: np.ndarray,
                    f: np.ndarray, n_row: np.ndarray, dt_row: np.ndarray,
                    prior: PriorSpec, scale: AdaptiveScale
                    ) -> tuple[float, np.ndarray, bool]:
    """Joint Gaussian random-walk move of one stock's intensity intercept
    and loadings against its Poisson likelihood."""
    K = w.size

    def loglik(b_, w_):
        lam = model.intensity_from_factors(np.array([b_]), w_.reshape(1, K),
                                           f, prior.lambda_star)[0]
        loglam = np.log(np.maximum(lam, 1e-300))
        return float(np.sum(n_row * loglam - dt_row * lam))

    step = scale.value * rng.standard_normal(K + 1)
    b_prop = b + step[0]
    w_prop = w + step[1:]
    log_acc = (loglik(b_prop, w_prop) - loglik(b, w)
               + model.log_prior_loadings(b_prop, w_prop, prior)
               - model.log_prior_loadings(b, w, prior))
    accepted = bool(math.log(1.0 - rng.random()) < log_acc)
    if accepted:
        b, w = b_prop, w_prop
    scale.update(accepted)
    return b, w, accepted
