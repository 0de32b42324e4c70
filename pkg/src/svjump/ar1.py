"""Banded Gaussian algebra for stationary AR(1) path priors.

A length-n path x with x_0 ~ N(m, sigma2/(1-phi^2)) and
x_t = m + phi (x_{t-1} - m) + N(0, sigma2) has a tridiagonal precision

    P = (1/sigma2) * tridiag(-phi; 1, 1+phi^2, ..., 1+phi^2, 1; -phi)

whose inverse has entries sigma2 phi^|s-t| / (1-phi^2).  Everything here
works on the two-row banded storage; no dense n x n matrix is ever formed,
so all operations are O(n) time and memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded, solve_banded

from .model import LOG_2PI


@dataclass
class Ar1Precision:
    """Tridiagonal precision of a stationary AR(1) path of ``length`` points."""

    phi: float
    sigma2: float
    length: int
    mean_level: float = 0.0

    def __post_init__(self) -> None:
        if not -1.0 < self.phi < 1.0:
            raise ValueError("phi must lie strictly inside (-1, 1)")
        if self.sigma2 <= 0.0:
            raise ValueError("sigma2 must be positive")
        if self.length < 1:
            raise ValueError("length must be at least 1")

    def banded(self) -> np.ndarray:
        """Lower banded storage: row 0 the diagonal, row 1 the subdiagonal."""
        n = self.length
        ab = np.zeros((2, n))
        ab[0] = (1.0 + self.phi**2) / self.sigma2
        ab[0, 0] = 1.0 / self.sigma2
        ab[0, -1] = 1.0 / self.sigma2
        if n == 1:
            ab[0, 0] = (1.0 - self.phi**2) / self.sigma2
        ab[1, :-1] = -self.phi / self.sigma2
        return ab

    def linear_term(self) -> np.ndarray:
        """P @ (mean_level * ones), closed form."""
        n, m = self.length, self.mean_level
        if n == 1:
            return np.array([m * (1.0 - self.phi**2) / self.sigma2])
        out = np.full(n, m * (1.0 - self.phi) ** 2 / self.sigma2)
        out[0] = out[-1] = m * (1.0 - self.phi) / self.sigma2
        return out

    def logdet(self) -> float:
        """log det P = log(1 - phi^2) - n log sigma2."""
        return math.log1p(-self.phi**2) - self.length * math.log(self.sigma2)

    def quad_form(self, x: np.ndarray) -> float:
        """x' P x without materializing P."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.length:
            raise ValueError("vector length mismatch")
        if self.length == 1:
            return float((1.0 - self.phi**2) / self.sigma2 * x[..., 0] ** 2)
        core = (x[..., 0] ** 2 + x[..., -1] ** 2
                + (1.0 + self.phi**2) * (x[..., 1:-1] ** 2).sum(axis=-1)
                - 2.0 * self.phi * (x[..., 1:] * x[..., :-1]).sum(axis=-1))
        return float(core / self.sigma2)


def build_ar1_precision(phi: float, sigma2: float, length: int,
                        mean_level: float = 0.0) -> Ar1Precision:
    return Ar1Precision(phi=phi, sigma2=sigma2, length=length, mean_level=mean_level)


@dataclass
class TridiagChol:
    """Banded Cholesky factor L (P = L L') of a tridiagonal SPD matrix."""

    ab: np.ndarray  # (2, n) lower banded factor

    @property
    def n(self) -> int:
        return self.ab.shape[1]

    def logdet_precision(self) -> float:
        return 2.0 * float(np.log(self.ab[0]).sum())

    def solve(self, b: np.ndarray) -> np.ndarray:
        """P^{-1} b."""
        return cho_solve_banded((self.ab, True), b)

    def solve_lt(self, z: np.ndarray) -> np.ndarray:
        """L'^{-1} z; if z ~ N(0, I) the result has covariance P^{-1}."""
        n = self.n
        up = np.zeros((2, n))
        up[0, 1:] = self.ab[1, :-1]
        up[1] = self.ab[0]
        return solve_banded((0, 1), up, z)

    def reconstruct_tridiag(self) -> tuple[np.ndarray, np.ndarray]:
        """(diagonal, subdiagonal) of L L', for verification at small n."""
        d = self.ab[0]
        e = self.ab[1, :-1]
        diag = d**2
        diag[1:] += e**2
        sub = e * d[:-1]
        return diag, sub


def cholesky_tridiag(diag: np.ndarray, sub: np.ndarray) -> TridiagChol:
    """Cholesky of tridiag(sub; diag; sub).  Raises on non-SPD input."""
    n = len(diag)
    ab = np.zeros((2, n))
    ab[0] = diag
    if n > 1:
        ab[1, :-1] = sub
    try:
        cb = cholesky_banded(ab, lower=True)
    except LinAlgError as err:
        raise np.linalg.LinAlgError(f"tridiagonal matrix not positive definite: {err}")
    return TridiagChol(ab=cb)


def ridged_chol(prec: Ar1Precision, ridge: float) -> TridiagChol:
    """Cholesky factor of P + ridge * I (ridge >= 0)."""
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    ab = prec.banded()
    return cholesky_tridiag(ab[0] + ridge, ab[1, :-1])


def solve_and_sample(prec: Ar1Precision, ridge: float, linear_term: np.ndarray,
                     rng: np.random.Generator,
                     chol: TridiagChol | None = None) -> tuple[np.ndarray, float]:
    """Draw from N(Q c, Q) with Q = (P + ridge I)^{-1} and c the linear term.

    Returns the draw and log det Q.  The same factorization may be passed
    in via ``chol`` to avoid refactorizing.
    """
    if chol is None:
        chol = ridged_chol(prec, ridge)
    mean = chol.solve(np.asarray(linear_term, dtype=float))
    z = rng.standard_normal(prec.length)
    return mean + chol.solve_lt(z), -chol.logdet_precision()


def marginal_loglik_evidence(z: np.ndarray, prec: Ar1Precision, noise_var: float,
                             mean: np.ndarray | float | None = None,
                             chol: TridiagChol | None = None) -> float:
    """log N(z | mean, C + noise_var I) where C = P^{-1} is the AR(1) covariance.

    Uses log det(C + vI) = n log v + log det(P + I/v) - log det P and
    (C + vI)^{-1} = I/v - (P + I/v)^{-1} / v^2, all banded.  ``chol`` may
    carry a precomputed factor of P + I/v.
    """
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")
    z = np.asarray(z, dtype=float)
    n = prec.length
    if z.shape != (n,):
        raise ValueError("z length mismatch")
    if mean is None:
        mean = prec.mean_level
    u = z - mean
    v = noise_var
    if chol is None:
        chol = ridged_chol(prec, 1.0 / v)
    logdet_cov = n * math.log(v) + chol.logdet_precision() - prec.logdet()
    quad = float(u @ u) / v - float(u @ chol.solve(u)) / v**2
    return -0.5 * (n * LOG_2PI + logdet_cov + quad)
