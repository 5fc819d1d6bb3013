"""Synthetic scenario generation for clustered grant-free access.

A scenario bundles the cluster layout, per-UE spatial covariances, the
covariance priors handed to the receivers, pilots, the activity pattern,
the effective channels and the noisy received pilot signal
``Y = Phi @ X.T + W``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError


@dataclass(frozen=True)
class ScenarioConfig:
    """Parameters of one simulated network.

    ``activity_mode`` is ``"clustered"`` or ``"independent"``. In clustered
    mode ``active_clusters * per_cluster_active`` must equal ``K``.
    """

    N: int = 200
    N_c: int = 20
    L: int = 10
    M: int = 4
    tau_p: int = 24
    K: int = 16
    activity_mode: str = "clustered"
    active_clusters: int = 2
    per_cluster_active: int = 8
    snr_db: float = 16.0
    angular_spread_deg: float = 10.0
    angle_jitter_deg: float = 2.0
    cov_mismatch: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.N != self.L * self.N_c:
            raise ConfigurationError(
                f"N must equal L * N_c (got N={self.N}, L={self.L}, N_c={self.N_c})")
        if self.M < 1:
            raise ConfigurationError(f"M must be >= 1 (got {self.M})")
        if self.tau_p < 1:
            raise ConfigurationError(f"tau_p must be >= 1 (got {self.tau_p})")
        if not 0 <= self.K <= self.N:
            raise ConfigurationError(f"K must lie in [0, N] (got K={self.K})")
        if self.activity_mode not in ("clustered", "independent"):
            raise ConfigurationError(
                f"activity_mode must be 'clustered' or 'independent' "
                f"(got {self.activity_mode!r})")
        if self.activity_mode == "clustered":
            if self.active_clusters * self.per_cluster_active != self.K:
                raise ConfigurationError(
                    "active_clusters * per_cluster_active must equal K "
                    f"({self.active_clusters} * {self.per_cluster_active} != {self.K})")
            if self.per_cluster_active > self.L:
                raise ConfigurationError(
                    f"per_cluster_active must be <= L "
                    f"(got {self.per_cluster_active} > {self.L})")
            if self.active_clusters > self.N_c:
                raise ConfigurationError(
                    f"active_clusters must be <= N_c "
                    f"(got {self.active_clusters} > {self.N_c})")
        if self.angular_spread_deg <= 0:
            raise ConfigurationError("angular_spread_deg must be > 0")
        if self.angle_jitter_deg < 0:
            raise ConfigurationError("angle_jitter_deg must be >= 0")
        if not 0.0 <= self.cov_mismatch <= 1.0:
            raise ConfigurationError("cov_mismatch must lie in [0, 1]")

    def replace(self, **changes) -> "ScenarioConfig":
        """Return a copy with ``changes`` applied (re-validated)."""
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        with open(Path(path)) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class ActivityPattern:
    c: np.ndarray  # (N_c,) cluster gates
    gamma: np.ndarray  # (N,) UE activity

    @property
    def S(self) -> np.ndarray:
        return np.flatnonzero(self.gamma)


@dataclass
class Scenario:
    config: ScenarioConfig
    clusters: list
    R_true: np.ndarray  # (N, M, M)
    B_prior: np.ndarray  # (N_c, M, M)
    p: np.ndarray  # (N,)
    Phi: np.ndarray  # (tau_p, N)
    activity: ActivityPattern
    X_true: np.ndarray  # (M, N)
    Y: np.ndarray  # (tau_p, M)
    sigma2: float
    angles: np.ndarray = field(default=None, repr=False)

    @property
    def support(self) -> np.ndarray:
        return self.activity.S


def make_clusters(N_c, L):
    """Consecutive index blocks ``[l*L, (l+1)*L)``."""
    return [np.arange(l * L, (l + 1) * L) for l in range(N_c)]


def generate_covariance(nominal_angle_rad, spread_rad, M):
    """Gaussian local-scattering covariance of a half-wavelength ULA.

    ``R[m, n] = exp(j*pi*(m-n)*sin(theta)) * exp(-0.5*(sigma*pi*(m-n)*cos(theta))**2)``,
    trace-normalized to ``M`` and projected onto the PSD cone.
    """
    d = np.subtract.outer(np.arange(M), np.arange(M)).astype(float)
    theta = float(nominal_angle_rad)
    with np.errstate(over="ignore", invalid="ignore"):
        decay = np.exp(-0.5 * (spread_rad * np.pi * d * np.cos(theta)) ** 2)
    decay = np.nan_to_num(decay, nan=0.0)
    np.fill_diagonal(decay, 1.0)
    R = np.exp(1j * np.pi * d * np.sin(theta)) * decay
    R = 0.5 * (R + R.conj().T)
    w, U = np.linalg.eigh(R)
    if w.min() < 0:
        w = np.clip(w, 0.0, None)
        R = (U * w) @ U.conj().T
        R = 0.5 * (R + R.conj().T)
    return R * (M / np.trace(R).real)


def random_psd(M, rng):
    """``A A^H`` with i.i.d. CN(0, 1) entries, trace-normalized to ``M``."""
    A = complex_normal(rng, (M, M))
    P = A @ A.conj().T
    P = 0.5 * (P + P.conj().T)
    return P * (M / np.trace(P).real)


def complex_normal(rng, shape, var=1.0):
    """i.i.d. circularly-symmetric CN(0, var) samples."""
    s = np.sqrt(var / 2.0)
    return s * rng.standard_normal(shape) + 1j * s * rng.standard_normal(shape)


def sample_activity(config, rng):
    N_c, L, N = config.N_c, config.L, config.N
    gamma = np.zeros(N, dtype=int)
    if config.K > 0:
        if config.activity_mode == "clustered":
            active = rng.choice(N_c, size=config.active_clusters, replace=False)
            for l in np.sort(active):
                members = rng.choice(L, size=config.per_cluster_active, replace=False)
                gamma[l * L + members] = 1
        else:
            gamma[rng.choice(N, size=config.K, replace=False)] = 1
    c = gamma.reshape(N_c, L).max(axis=1)
    return ActivityPattern(c=c, gamma=gamma)


def generate_pilots(tau_p, N, rng):
    """Complex Bernoulli pilots ``(+-1 +- 1j) / sqrt(2 tau_p)``; unit-norm columns."""
    re = rng.integers(0, 2, size=(tau_p, N)) * 2 - 1
    im = rng.integers(0, 2, size=(tau_p, N)) * 2 - 1
    return (re + 1j * im) / np.sqrt(2.0 * tau_p)


def sample_channels(R, p, gamma, rng):
    """Effective channels ``x_i = gamma_i sqrt(p_i) h_i`` with ``h_i ~ CN(0, R_i)``."""
    N, M, _ = R.shape
    X = np.zeros((M, N), dtype=complex)
    for i in np.flatnonzero(gamma):
        w, U = np.linalg.eigh(R[i])
        if w.min() < -1e-8 * max(w.max(), 1.0):
            raise ValueError(f"covariance of UE {i} is not PSD (min eig {w.min():.3e})")
        F = U * np.sqrt(np.clip(w, 0.0, None))
        X[:, i] = np.sqrt(p[i]) * (F @ complex_normal(rng, M))
    return X


def synthesize_rx(Phi, X, sigma2, rng):
    tau_p, N = Phi.shape
    if X.ndim != 2 or X.shape[1] != N:
        raise ValueError(f"X must have shape (M, {N}), got {X.shape}")
    Y = Phi @ X.T
    if sigma2 > 0:
        Y = Y + complex_normal(rng, Y.shape, sigma2)
    return Y


def generate_scenario(config: ScenarioConfig) -> Scenario:
    """Draw a full scenario; bit-reproducible from ``config`` (incl. its seed)."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    N, N_c, L, M = config.N, config.N_c, config.L, config.M
    clusters = make_clusters(N_c, L)

    cluster_angles = np.deg2rad(rng.uniform(-60.0, 60.0, size=N_c))
    jitter = np.deg2rad(rng.uniform(-config.angle_jitter_deg, config.angle_jitter_deg, size=N))
    angles = np.repeat(cluster_angles, L) + jitter
    spread = np.deg2rad(config.angular_spread_deg)
    R = np.stack([generate_covariance(a, spread, M) for a in angles])

    zeta = config.cov_mismatch
    B = np.empty((N_c, M, M), dtype=complex)
    for l, idx in enumerate(clusters):
        Psi = random_psd(M, rng)
        B[l] = zeta * Psi + (1.0 - zeta) * R[idx].mean(axis=0)

    p = M / np.trace(R, axis1=1, axis2=2).real
    sigma2 = 10.0 ** (-config.snr_db / 10.0)

    activity = sample_activity(config, rng)
    Phi = generate_pilots(config.tau_p, N, rng)
    X = sample_channels(R, p, activity.gamma, rng)
    Y = synthesize_rx(Phi, X, sigma2, rng)
    return Scenario(config=config, clusters=clusters, R_true=R, B_prior=B, p=p,
                    Phi=Phi, activity=activity, X_true=X, Y=Y, sigma2=sigma2,
                    angles=angles)
