"""EM-EP: expectation propagation with a hierarchical spike-and-slab prior.

The posterior over the effective channels ``X`` (M x N) and the cluster gates
``c`` factorizes into the Gaussian likelihood and one spike-and-slab factor
per cluster. The likelihood is Gaussian and is kept exactly; each cluster
factor is replaced by a Gaussian site per UE whose parameters are refreshed
by moment matching against the tilted distribution. The hyper-parameters
(per-UE scales ``gamma_bar`` and per-cluster spatial covariances ``R_bar``)
are updated by an M-step after every EP sweep.

Sites are stored in natural parameters (precision, precision-mean) because
they are allowed to be improper.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .exceptions import ConfigurationError, NumericalFailure
from .gaussian import LOG_PI, herm, is_pd

log = logging.getLogger(__name__)

_GAMMA_FLOOR = 1e-10


@dataclass
class EmEpConfig:
    """Tuning knobs of :func:`run_em_ep`.

    ``eps`` is the prior probability that a cluster is active. ``d`` is the
    inverse-Wishart exponent. ``damping`` is the weight of the freshly
    computed site (1 reproduces undamped EP). ``update_hyper=False`` freezes
    ``gamma_bar`` and ``R_bar`` at their initial values (pure EP).
    """

    eps: float = 0.1
    d: float = 1.0
    damping: float = 0.7
    site_init_var: float = 1e6
    eps_thr: float = 1e-3
    gamma_prune: float = 1e-3
    theta_act: float = 0.05
    eps_stp: float = 2e-3
    k_max: int = 30
    zeta_ep: float = 1e-6
    repair_attempts: int = 6
    update_hyper: bool = True
    gamma_init: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise ConfigurationError(f"eps must lie in (0, 1) (got {self.eps})")
        if self.d <= 0:
            raise ConfigurationError(f"d must be > 0 (got {self.d})")
        if not 0.0 < self.damping <= 1.0:
            raise ConfigurationError(f"damping must lie in (0, 1] (got {self.damping})")
        if self.k_max < 1:
            raise ConfigurationError("k_max must be >= 1")


@dataclass
class HyperParams:
    gamma_bar: np.ndarray  # (N,)
    R_bar: np.ndarray  # (N_c, M, M)
    eps: float
    d: float


@dataclass
class EpState:
    """Mutable EP/EM state of one trial."""

    Phi: np.ndarray
    Y: np.ndarray
    sigma2: float
    gram: np.ndarray  # Phi^H Phi, (N, N)
    matched: np.ndarray  # Phi^H Y, (N, M); row i is the i-th block of Theta^H y
    cluster_of: np.ndarray  # (N,) cluster index of each UE
    clusters: list
    B: np.ndarray  # (N_c, M, M) covariance priors
    site_prec: np.ndarray  # (N, M, M)
    site_pm: np.ndarray  # (N, M)
    mean: np.ndarray  # (N, M) marginal means m_i
    cov: np.ndarray  # (N, M, M) marginal covariances Sigma_i
    gate_post: np.ndarray  # (N_c,)
    hyper: HyperParams
    live: np.ndarray  # (N_c,) bool
    trace: list = field(default_factory=list)

    @property
    def N(self):
        return self.gram.shape[0]

    @property
    def M(self):
        return self.matched.shape[1]

    @property
    def live_ues(self):
        return np.flatnonzero(self.live[self.cluster_of])

    def slab_cov(self, idx):
        """``R_i = gamma_bar_i * R_bar_{l(i)}`` for the UEs in ``idx``."""
        g = self.hyper.gamma_bar[idx]
        return g[:, None, None] * self.hyper.R_bar[self.cluster_of[idx]]


@dataclass
class EmEpResult:
    X_hat: np.ndarray  # (M, N)
    support: np.ndarray
    gate_post: np.ndarray
    hyper: HyperParams
    n_iter: int
    mean: np.ndarray
    cov: np.ndarray
    live: np.ndarray
    trace: list


def _cluster_index(clusters, N):
    cluster_of = np.full(N, -1, dtype=int)
    for l, idx in enumerate(clusters):
        cluster_of[np.asarray(idx)] = l
    if np.any(cluster_of < 0):
        raise ConfigurationError("clusters must cover every UE")
    return cluster_of


def init_state(Y, Phi, sigma2, clusters, B=None, config=None):
    """Set the exact likelihood factor and near-flat sites."""
    config = config or EmEpConfig()
    Y = np.asarray(Y, dtype=complex)
    Phi = np.asarray(Phi, dtype=complex)
    if sigma2 <= 0:
        raise ConfigurationError(f"noise variance must be > 0 (got {sigma2})")
    tau_p, N = Phi.shape
    if Y.shape[0] != tau_p:
        raise ConfigurationError(f"Y has {Y.shape[0]} rows, Phi has {tau_p}")
    M = Y.shape[1]
    cluster_of = _cluster_index(clusters, N)
    N_c = len(clusters)
    if B is None:
        B = np.broadcast_to(np.eye(M, dtype=complex), (N_c, M, M)).copy()
    B = np.asarray(B, dtype=complex)

    site_prec = np.broadcast_to(np.eye(M, dtype=complex) / config.site_init_var, (N, M, M)).copy()
    hyper = HyperParams(gamma_bar=np.full(N, float(config.gamma_init)), R_bar=B.copy(),
                        eps=config.eps, d=config.d)
    return EpState(
        Phi=Phi, Y=Y, sigma2=float(sigma2),
        gram=herm(Phi.conj().T @ Phi), matched=Phi.conj().T @ Y,
        cluster_of=cluster_of, clusters=[np.asarray(c) for c in clusters], B=B,
        site_prec=site_prec, site_pm=np.zeros((N, M), dtype=complex),
        mean=np.zeros((N, M), dtype=complex), cov=np.zeros((N, M, M), dtype=complex),
        gate_post=np.full(N_c, config.eps), hyper=hyper,
        live=np.ones(N_c, dtype=bool),
    )


def joint_precision(state, idx):
    """``(1/sigma2) (Phi_u^H Phi_u) kron I_M + blockdiag(site precisions)`` for UEs ``idx``."""
    n, M = len(idx), state.M
    G = state.gram[np.ix_(idx, idx)] / state.sigma2
    P = np.einsum("ab,ij->aibj", G, np.eye(M)).astype(complex)
    P[np.arange(n), :, np.arange(n), :] += state.site_prec[idx]
    return P.reshape(n * M, n * M)


def global_refresh(state):
    """Recompute marginal means/covariances of all live UEs from the joint system."""
    idx = state.live_ues
    dead = np.setdiff1d(np.arange(state.N), idx)
    state.mean[dead] = 0.0
    state.cov[dead] = 0.0
    if idx.size == 0:
        return state
    n, M = idx.size, state.M
    P = herm(joint_precision(state, idx))
    rhs = (state.matched[idx] / state.sigma2 + state.site_pm[idx]).reshape(n * M)
    try:
        cf = scipy.linalg.cho_factor(P, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        scale = max(1.0, float(np.max(np.abs(np.diag(P)))))
        try:
            cf = scipy.linalg.cho_factor(P + 1e-9 * scale * np.eye(n * M), lower=True,
                                         check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("joint precision is not positive definite") from exc
    Lfac = np.tril(cf[0])
    mean = scipy.linalg.cho_solve(cf, rhs, check_finite=False)
    # diagonal blocks of P^-1 = L^-H L^-1
    Linv = scipy.linalg.solve_triangular(Lfac, np.eye(n * M), lower=True, check_finite=False)
    Lb = Linv.reshape(n * M, n, M)
    cov = np.einsum("kai,kaj->aij", Lb.conj(), Lb)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise NumericalFailure("joint solve produced non-finite values")
    state.mean[idx] = mean.reshape(n, M)
    state.cov[idx] = herm(cov)
    return state


def _repair_pd(S, zeta, attempts):
    """Add ``zeta * 10**k * I`` (k = 0..attempts-1) until ``S`` is PD; None if exhausted."""
    if is_pd(S):
        return S
    eye = np.eye(S.shape[-1])
    for k in range(attempts):
        T = S + zeta * 10.0 ** k * eye
        if is_pd(T):
            return T
    return None


def _cavity_batch(state, idx, config):
    """Cavity moments for UEs ``idx`` plus a per-UE success flag."""
    marg_prec = np.linalg.inv(state.cov[idx])
    cav_prec = herm(marg_prec - state.site_prec[idx])
    cav_pm = (marg_prec @ state.mean[idx][..., None])[..., 0] - state.site_pm[idx]
    ok = np.ones(idx.size, dtype=bool)
    cav_cov = np.empty_like(cav_prec)
    cav_mean = np.empty_like(cav_pm)
    for k in range(idx.size):
        try:
            S = herm(np.linalg.inv(cav_prec[k]))
        except np.linalg.LinAlgError:
            S = np.full_like(cav_prec[k], np.nan)
        if not np.all(np.isfinite(S)):
            # singular precision difference: fall back to the marginal plus jitter
            S = state.cov[idx[k]].copy()
            m = state.mean[idx[k]]
            S = _repair_pd(S + config.zeta_ep * np.eye(state.M), config.zeta_ep,
                           config.repair_attempts)
        else:
            m = S @ cav_pm[k]
            S = _repair_pd(S, config.zeta_ep, config.repair_attempts)
        if S is None:
            ok[k] = False
            cav_cov[k] = np.nan
            cav_mean[k] = np.nan
            continue
        cav_cov[k] = S
        cav_mean[k] = m
    return cav_mean, cav_cov, ok


def cavity(state, l, config=None):
    """Cavity beliefs ``(means, covs, ok)`` for the UEs of cluster ``l``."""
    config = config or EmEpConfig()
    return _cavity_batch(state, state.clusters[l], config)


def _log_cn0(mean, cov):
    """Stacked ``log CN(0; mean, cov)``."""
    Lc = np.linalg.cholesky(herm(cov))
    w = np.linalg.solve(Lc, mean[..., None])[..., 0]
    logdet = 2.0 * np.sum(np.log(np.real(np.diagonal(Lc, axis1=-2, axis2=-1))), axis=-1)
    return -mean.shape[-1] * LOG_PI - logdet - np.sum(np.abs(w) ** 2, axis=-1)


def _normalizer_terms(cav_mean, cav_cov, R_slab, eps, group, n_groups):
    """Per-group ``(log a, log b, log G)`` with ``group`` mapping UEs to groups."""
    lb_ue = _log_cn0(cav_mean, cav_cov)
    la_ue = _log_cn0(cav_mean, cav_cov + R_slab)
    log_b = np.log1p(-eps) + np.bincount(group, lb_ue, minlength=n_groups)
    log_a = np.log(eps) + np.bincount(group, la_ue, minlength=n_groups)
    log_G = np.logaddexp(log_a, log_b)
    return log_a, log_b, log_G


def cluster_normalizer(l, cav_mean, cav_cov, hyper, state):
    """``(log a_l, log b_l, log G_l0)`` of cluster ``l`` given its cavities."""
    idx = state.clusters[l]
    R_slab = state.slab_cov(idx)
    la, lb, lg = _normalizer_terms(cav_mean, cav_cov, R_slab, hyper.eps,
                                   np.zeros(idx.size, dtype=int), 1)
    return float(la[0]), float(lb[0]), float(lg[0])


def _slab_posterior(cav_mean, cav_cov, R_slab):
    """Moments of ``CN(x; 0, R) CN(x; m_hat, S_hat)`` normalized.

    ``mu = R (R + S_hat)^-1 m_hat`` and ``C = R - R (R + S_hat)^-1 R``; both
    vanish when ``R = 0``.
    """
    A = herm(R_slab + cav_cov)
    K = np.linalg.solve(A, R_slab)  # (R + S)^-1 R
    KH = np.conj(np.swapaxes(K, -1, -2))  # R (R + S)^-1
    mu = (KH @ cav_mean[..., None])[..., 0]
    C = herm(R_slab - R_slab @ K)
    return mu, C


def tilted_from_gate(pi, cav_mean, cav_cov, R_slab):
    """Mixture moments given the per-UE gate posterior ``pi``.

    ``E[x] = pi mu`` and ``Var[x] = pi C + pi (1 - pi) mu mu^H``.
    """
    mu, C = _slab_posterior(cav_mean, cav_cov, R_slab)
    p = np.asarray(pi, dtype=float)
    Ex = p[:, None] * mu
    outer = mu[:, :, None] * mu.conj()[:, None, :]
    Var = p[:, None, None] * C + (p * (1.0 - p))[:, None, None] * outer
    return Ex, herm(Var)


def tilted_moments(l, cav_mean, cav_cov, hyper, logs, state):
    """``(E[c_l], E[x_i], Var[x_i])`` for the UEs of cluster ``l``."""
    log_a, _, log_G = logs
    pi = float(np.exp(log_a - log_G))
    idx = state.clusters[l]
    Ex, Var = tilted_from_gate(np.full(idx.size, pi), cav_mean, cav_cov, state.slab_cov(idx))
    return pi, Ex, Var


def _site_from_moments(Ex, Var, cav_mean, cav_cov, config):
    """New site natural parameters; ``ok`` is False where ``Var`` could not be repaired."""
    n, M = Ex.shape
    prec = np.empty((n, M, M), dtype=complex)
    pm = np.empty((n, M), dtype=complex)
    ok = np.ones(n, dtype=bool)
    cav_prec = np.linalg.inv(cav_cov)
    cav_pm = (cav_prec @ cav_mean[..., None])[..., 0]
    for k in range(n):
        V = _repair_pd(Var[k], config.zeta_ep, config.repair_attempts)
        if V is None:
            ok[k] = False
            continue
        Vinv = np.linalg.inv(V)
        prec[k] = herm(Vinv - cav_prec[k])
        pm[k] = Vinv @ Ex[k] - cav_pm[k]
    return prec, pm, ok


def update_site(state, idx, Ex, Var, cav_mean, cav_cov, config, damping=None):
    """Refresh the sites of UEs ``idx`` by natural-parameter subtraction with damping."""
    eta = config.damping if damping is None else damping
    prec, pm, ok = _site_from_moments(Ex, Var, cav_mean, cav_cov, config)
    upd = idx[ok]
    state.site_prec[upd] = herm((1.0 - eta) * state.site_prec[upd] + eta * prec[ok])
    state.site_pm[upd] = (1.0 - eta) * state.site_pm[upd] + eta * pm[ok]
    return ok


def ep_sweep(state, config):
    """One parallel site sweep over every live cluster using frozen marginals."""
    idx = state.live_ues
    if idx.size == 0:
        return 0
    cav_mean, cav_cov, ok = _cavity_batch(state, idx, config)
    groups = state.cluster_of[idx]
    bad_clusters = np.unique(groups[~ok])
    keep = ~np.isin(groups, bad_clusters)
    for l in bad_clusters:
        log.debug("cavity repair exhausted for cluster %d; skipping its update", l)
    idx, cav_mean, cav_cov, groups = idx[keep], cav_mean[keep], cav_cov[keep], groups[keep]
    if idx.size == 0:
        return 0
    R_slab = state.slab_cov(idx)
    log_a, _, log_G = _normalizer_terms(cav_mean, cav_cov, R_slab, state.hyper.eps,
                                        groups, len(state.clusters))
    gate = np.exp(log_a - log_G)
    Ex, Var = tilted_from_gate(gate[groups], cav_mean, cav_cov, R_slab)
    update_site(state, idx, Ex, Var, cav_mean, cav_cov, config)
    updated = np.unique(groups)
    state.gate_post[updated] = gate[updated]
    return updated.size


def m_step(state):
    """Closed-form EM updates of ``gamma_bar`` and the per-cluster ``R_bar``."""
    hyper = state.hyper
    M, d = state.M, hyper.d
    for l in np.flatnonzero(state.live):
        idx = state.clusters[l]
        E = state.mean[idx][:, :, None] * state.mean[idx].conj()[:, None, :] + state.cov[idx]
        Rinv = np.linalg.inv(hyper.R_bar[l])
        g = np.real(np.einsum("ij,kji->k", Rinv, E)) / M
        g = np.maximum(g, _GAMMA_FLOOR)
        hyper.gamma_bar[idx] = g
        L = idx.size
        S = np.sum(E / g[:, None, None], axis=0)
        hyper.R_bar[l] = herm((S + L * state.B[l]) / (L + L * d))
    return hyper


def prune(state, eps_thr, gamma_prune=0.0):
    """Drop live clusters whose gate posterior fell below ``eps_thr``.

    A cluster whose every ``gamma_bar`` is below ``gamma_prune`` is dropped as
    well: once the slab has collapsed onto the spike the gate posterior
    carries no information and relaxes back to the prior.
    """
    drop = state.live & (state.gate_post < eps_thr)
    if gamma_prune > 0:
        collapsed = np.array([state.hyper.gamma_bar[idx].max() < gamma_prune
                              for idx in state.clusters])
        drop |= state.live & collapsed
    if np.any(drop):
        state.live[drop] = False
        for l in np.flatnonzero(drop):
            idx = state.clusters[l]
            state.mean[idx] = 0.0
            state.cov[idx] = 0.0
    return state


def _estimate(state, theta_act):
    X = np.zeros((state.M, state.N), dtype=complex)
    idx = state.live_ues
    if idx.size == 0:
        return X, np.array([], dtype=int)
    energy = np.sum(np.abs(state.mean[idx]) ** 2, axis=1)
    top = energy.max()
    if top <= 0:
        return X, np.array([], dtype=int)
    S = np.sort(idx[energy >= theta_act * top])
    X[:, S] = state.mean[S].T
    return X, S


def run_em_ep(Y, Phi, sigma2, clusters, B=None, config=None, trace=False):
    """Joint activity detection and channel estimation by EM-EP.

    Parameters
    ----------
    Y : (tau_p, M) complex array
        Received pilot signal.
    Phi : (tau_p, N) complex array
        Pilot matrix.
    sigma2 : float
        Noise variance.
    clusters : list of index arrays
        Partition of the UEs into clusters.
    B : (N_c, M, M) array, optional
        Covariance priors; also the initial ``R_bar``. Identity by default.
    config : EmEpConfig, optional
    trace : bool
        Record per-iteration diagnostics in ``result.trace``.

    Returns
    -------
    EmEpResult
    """
    config = config or EmEpConfig()
    state = init_state(Y, Phi, sigma2, clusters, B, config)
    global_refresh(state)
    X_prev, _ = _estimate(state, config.theta_act)
    k = 0
    for k in range(1, config.k_max + 1):
        ep_sweep(state, config)
        global_refresh(state)
        if config.update_hyper:
            m_step(state)
        prune(state, config.eps_thr, config.gamma_prune)
        X_cur, _ = _estimate(state, config.theta_act)
        change = np.linalg.norm(X_cur - X_prev)
        ref = np.linalg.norm(X_cur)
        if trace:
            state.trace.append({"iter": k, "change": float(change),
                                "live_clusters": int(state.live.sum()),
                                "gate_post": state.gate_post.copy()})
        if not state.live.any() or change < config.eps_stp * ref:
            break
        X_prev = X_cur
    X_hat, S = _estimate(state, config.theta_act)
    return EmEpResult(X_hat=X_hat, support=S, gate_post=state.gate_post.copy(),
                      hyper=state.hyper, n_iter=k, mean=state.mean.copy(),
                      cov=state.cov.copy(), live=state.live.copy(), trace=state.trace)
