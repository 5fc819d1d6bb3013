"""Input checks shared by the estimator wrappers and the harness."""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigurationError


def check_pilot_system(Y, Phi):
    """Return ``(Y, Phi)`` as complex 2-D arrays with matching row counts."""
    Y = np.asarray(Y)
    Phi = np.asarray(Phi)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.ndim != 2 or Phi.ndim != 2:
        raise ConfigurationError(f"Y and Phi must be 2-D (got {Y.ndim}-D and {Phi.ndim}-D)")
    if Y.shape[0] != Phi.shape[0]:
        raise ConfigurationError(
            f"Y has {Y.shape[0]} rows but Phi has {Phi.shape[0]}; both must equal tau_p")
    if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(Phi))):
        raise ConfigurationError("Y and Phi must be finite")
    return Y.astype(complex), Phi.astype(complex)


def check_noise_var(sigma2):
    sigma2 = float(sigma2)
    if not np.isfinite(sigma2) or sigma2 <= 0:
        raise ConfigurationError(f"noise variance must be finite and > 0 (got {sigma2})")
    return sigma2


def check_clusters(clusters, N):
    """Validate a partition of ``range(N)``; ``None`` means one UE per cluster."""
    if clusters is None:
        return [np.array([i]) for i in range(N)]
    out = [np.asarray(c, dtype=int).ravel() for c in clusters]
    if not out or any(c.size == 0 for c in out):
        raise ConfigurationError("clusters must be a non-empty list of non-empty index sets")
    flat = np.concatenate(out)
    if flat.size != N or not np.array_equal(np.sort(flat), np.arange(N)):
        raise ConfigurationError(f"clusters must partition the {N} UEs exactly once")
    return out


def check_cov_prior(B, n_clusters, M):
    """Per-cluster Hermitian PSD priors of shape ``(n_clusters, M, M)``; identity if ``None``."""
    if B is None:
        return np.broadcast_to(np.eye(M, dtype=complex), (n_clusters, M, M)).copy()
    B = np.asarray(B, dtype=complex)
    if B.ndim == 2:
        B = np.broadcast_to(B, (n_clusters, M, M)).copy()
    if B.shape != (n_clusters, M, M):
        raise ConfigurationError(f"cov_prior must have shape {(n_clusters, M, M)} (got {B.shape})")
    if not np.allclose(B, np.conj(np.swapaxes(B, -1, -2)), atol=1e-8):
        raise ConfigurationError("cov_prior matrices must be Hermitian")
    if np.min(np.linalg.eigvalsh(B)) < -1e-8:
        raise ConfigurationError("cov_prior matrices must be positive semi-definite")
    return B
