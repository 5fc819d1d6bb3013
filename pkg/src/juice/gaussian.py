"""Complex Gaussian belief algebra.

Beliefs are circularly-symmetric complex Gaussians
``CN(x; mu, S) = pi^-M |S|^-1 exp(-(x - mu)^H S^-1 (x - mu))``.
All functions accept stacked inputs: means of shape ``(..., M)`` and
covariances of shape ``(..., M, M)``. Scale factors are kept in the log
domain.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import DegenerateBeliefError

LOG_PI = np.log(np.pi)


def herm(A):
    """Hermitian part of a (stack of) square matrices."""
    return 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))


def _cholesky(S):
    try:
        return np.linalg.cholesky(herm(S))
    except np.linalg.LinAlgError as exc:
        raise DegenerateBeliefError("matrix is not positive definite") from exc


def is_pd(S):
    """True if every matrix in the stack is Hermitian positive definite."""
    try:
        np.linalg.cholesky(herm(S))
    except np.linalg.LinAlgError:
        return False
    return True


def inv_herm(S):
    """Inverse of a (stack of) invertible Hermitian matrices."""
    try:
        return herm(np.linalg.inv(S))
    except np.linalg.LinAlgError as exc:
        raise DegenerateBeliefError("matrix is singular") from exc


def logdet_pd(S):
    L = _cholesky(S)
    return 2.0 * np.sum(np.log(np.real(np.diagonal(L, axis1=-2, axis2=-1))), axis=-1)


def log_cn(x, mean, cov):
    """Log-density of ``CN(x; mean, cov)`` evaluated through a Cholesky factor."""
    L = _cholesky(cov)
    d = np.asarray(x) - np.asarray(mean)
    M = L.shape[-1]
    # forward substitution L w = d, done as a batched solve
    w = np.linalg.solve(L, d[..., None])[..., 0]
    quad = np.sum(np.abs(w) ** 2, axis=-1)
    logdet = 2.0 * np.sum(np.log(np.real(np.diagonal(L, axis1=-2, axis2=-1))), axis=-1)
    return -M * LOG_PI - logdet - quad


@dataclass(frozen=True)
class GaussianBelief:
    """Complex Gaussian factor in moment form, natural parameters cached."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=complex))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=complex))
        if self.cov.shape[-2:] != (self.mean.shape[-1],) * 2:
            raise ValueError(f"mean {self.mean.shape} and cov {self.cov.shape} disagree")

    @classmethod
    def scalar(cls, mean, var):
        return cls(np.array([mean]), np.array([[var]]))

    @classmethod
    def from_natural(cls, precision, precision_mean):
        cov = inv_herm(precision)
        mean = (cov @ np.asarray(precision_mean)[..., None])[..., 0]
        return cls(mean, cov)

    @property
    def dim(self):
        return self.mean.shape[-1]

    @cached_property
    def precision(self):
        return inv_herm(self.cov)

    @cached_property
    def precision_mean(self):
        return (self.precision @ self.mean[..., None])[..., 0]

    @cached_property
    def proper(self):
        return is_pd(self.cov)


def product(g1: GaussianBelief, g2: GaussianBelief):
    """``CN(x; m1, S1) CN(x; m2, S2) = K_p CN(x; m_p, S_p)``.

    Returns the normalized belief and ``log K_p = log CN(m1; m2, S1 + S2)``.
    """
    prec = g1.precision + g2.precision
    try:
        cov = inv_herm(prec)
    except DegenerateBeliefError as exc:
        raise DegenerateBeliefError("combined precision is singular") from exc
    mean = (cov @ (g1.precision_mean + g2.precision_mean)[..., None])[..., 0]
    log_scale = log_cn(g1.mean, g2.mean, g1.cov + g2.cov)
    return GaussianBelief(mean, cov), log_scale


def quotient(g1: GaussianBelief, g2: GaussianBelief):
    """``CN(x; m1, S1) / CN(x; m2, S2) = K_q CN(x; m_q, S_q)``.

    The result may be improper. ``log K_q = -log CN(m_q; m2, S_q + S2)`` is
    returned when ``S_q + S2`` is positive definite and ``None`` otherwise.
    """
    prec = g1.precision - g2.precision
    try:
        cov = inv_herm(prec)
    except DegenerateBeliefError as exc:
        raise DegenerateBeliefError("precision difference is singular") from exc
    if not np.all(np.isfinite(cov)):
        raise DegenerateBeliefError("precision difference is singular")
    mean = (cov @ (g1.precision_mean - g2.precision_mean)[..., None])[..., 0]
    out = GaussianBelief(mean, cov)
    try:
        log_scale = -log_cn(mean, g2.mean, cov + g2.cov)
    except DegenerateBeliefError:
        log_scale = None
    return out, log_scale


def log_density_at_zero(g: GaussianBelief):
    """``log CN(0; mean, cov)``; requires a proper belief."""
    return log_cn(np.zeros_like(g.mean), g.mean, g.cov)
