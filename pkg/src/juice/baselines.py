"""Reference estimators: genie-aided MMSE and iterative reweighted l2,1."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import admm
from .emep import _repair_pd
from .exceptions import ConfigurationError, NumericalFailure
from .gaussian import herm


@dataclass
class OracleInfo:
    """Genie knowledge handed to :func:`oracle_mmse`.

    ``R_true`` holds one covariance per UE (shape ``(N, M, M)``) and ``p``
    the per-UE powers; only the entries in ``S_true`` are used.
    """

    S_true: np.ndarray
    R_true: np.ndarray
    p: np.ndarray
    sigma2: float

    def __post_init__(self):
        self.S_true = np.unique(np.asarray(self.S_true, dtype=int))
        self.R_true = np.asarray(self.R_true, dtype=complex)
        self.p = np.broadcast_to(np.asarray(self.p, dtype=float), (self.R_true.shape[0],))
        if self.sigma2 <= 0:
            raise ConfigurationError(f"noise variance must be > 0 (got {self.sigma2})")
        if self.S_true.size and (self.S_true.min() < 0 or self.S_true.max() >= self.R_true.shape[0]):
            raise ConfigurationError("S_true indexes outside the UE range")


def _prior_precisions(R, zeta=1e-6, attempts=6):
    out = np.empty_like(R)
    for k, Rk in enumerate(R):
        Rk = _repair_pd(herm(Rk), zeta, attempts)
        if Rk is None:
            raise NumericalFailure("prior covariance could not be repaired")
        out[k] = herm(np.linalg.inv(Rk))
    return out


def oracle_mmse(Y, Phi, oracle: OracleInfo):
    """MMSE estimate of ``X`` given the true support and covariances.

    Returns an ``(M, N)`` array whose columns outside ``S_true`` are zero.
    """
    Y = np.asarray(Y, dtype=complex)
    Phi = np.asarray(Phi, dtype=complex)
    M, N = Y.shape[1], Phi.shape[1]
    X = np.zeros((M, N), dtype=complex)
    S = oracle.S_true
    n = S.size
    if n == 0:
        return X
    Phi_S = Phi[:, S]
    G = herm(Phi_S.conj().T @ Phi_S) / oracle.sigma2
    P = np.einsum("ab,ij->aibj", G, np.eye(M)).astype(complex)
    P[np.arange(n), :, np.arange(n), :] += _prior_precisions(
        oracle.p[S, None, None] * oracle.R_true[S])
    rhs = (Phi_S.conj().T @ Y / oracle.sigma2).reshape(n * M)
    P = herm(P.reshape(n * M, n * M))
    try:
        xs = scipy.linalg.solve(P, rhs, assume_a="pos", check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("oracle system is not positive definite") from exc
    X[:, S] = xs.reshape(n, M).T
    return X


@dataclass
class IrwConfig:
    """Settings of :func:`irw_l21`.

    Each of the ``n_reweight`` stages solves the weighted group lasso
    ``0.5 ||Y - Phi X^T||^2 + lam sum_i w_i ||x_i||`` by ADMM to relative
    tolerance ``eps_stp`` (at most ``k_max`` iterations), then refreshes
    ``w_i = 1 / (||x_i|| + eps0)``. The first stage uses unit weights.
    """

    lam: float = 0.3
    eps0: float = 1.0
    rho: float = 1.0
    n_reweight: int = 5
    k_max: int = 300
    eps_stp: float = 1e-4
    eps_thr: float = 0.05

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigurationError("lam must be >= 0")
        if self.eps0 <= 0 or self.rho <= 0:
            raise ConfigurationError("eps0 and rho must be > 0")
        if self.n_reweight < 1 or self.k_max < 1:
            raise ConfigurationError("n_reweight and k_max must be >= 1")


@dataclass
class IrwResult:
    X_hat: np.ndarray
    support: np.ndarray
    n_iter: int
    weights: np.ndarray
    X_raw: np.ndarray


def irw_l21(Y, Phi, sigma2=None, config=None):
    """Iterative reweighted l2,1 minimization through the ADMM kernels.

    The correlation block of corr-MAP-ADMM is switched off, so the ``V``
    copy reduces to ``X + Lam_v / rho``. ``sigma2`` is unused and accepted
    for interface parity.
    """
    config = config or IrwConfig()
    Y = np.asarray(Y, dtype=complex)
    Phi = np.asarray(Phi, dtype=complex)
    M, N = Y.shape[1], Phi.shape[1]
    rho = config.rho
    gram_inv = admm.gram_inverse(Phi, rho)
    X = np.zeros((M, N), dtype=complex)
    Z, V, Lz, Lv = X.copy(), X.copy(), X.copy(), X.copy()
    w = np.ones(N)
    total = 0
    for _ in range(config.n_reweight):
        alpha = config.lam * w
        for _ in range(config.k_max):
            X_prev = X
            Z = admm.z_update(X, Lz, Y, Phi, rho, gram_inv)
            V = X + Lv / rho
            X = admm.x_update(Z, V, Lz, Lv, alpha, rho)
            Lz, Lv = admm.dual_update(X, Z, V, Lz, Lv, rho)
            total += 1
            if np.linalg.norm(X - X_prev) <= config.eps_stp * np.linalg.norm(X):
                break
        w = 1.0 / (admm.column_norms(X) + config.eps0)

    norms = admm.column_norms(X)
    top = norms.max()
    support = np.flatnonzero(norms > config.eps_thr * top) if top > 0 else np.array([], dtype=int)
    X_hat = np.zeros_like(X)
    X_hat[:, support] = X[:, support]
    return IrwResult(X_hat=X_hat, support=support, n_iter=total, weights=w, X_raw=X)
