"""Activity-detection and channel-estimation metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class UndefinedMetricError(ValueError):
    """The metric has no value for the given inputs (e.g. empty support)."""


@dataclass
class TrialMetrics:
    srr: float
    srr_fa: float
    nmse_num: float
    nmse_den: float
    support_true: np.ndarray = field(repr=False)
    support_est: np.ndarray = field(repr=False)
    iters: int = 0
    wall_time: float = 0.0


def srr(S, S_hat, K=None, convention="printed"):
    """Support recovery rate.

    ``convention="printed"`` divides the hit count by ``|S - S_hat| + K``
    (misses only); ``convention="false_alarm"`` divides by
    ``|S_hat - S| + K`` so that false alarms are penalized.
    """
    S = set(np.asarray(S, dtype=int).tolist())
    S_hat = set(np.asarray(S_hat, dtype=int).tolist())
    K = len(S) if K is None else K
    if K == 0:
        raise UndefinedMetricError("SRR is undefined when K = 0")
    hits = len(S & S_hat)
    if convention == "printed":
        return hits / (len(S - S_hat) + K)
    if convention == "false_alarm":
        return hits / (len(S_hat - S) + K)
    raise ValueError(f"unknown SRR convention {convention!r}")


def squared_errors(X, X_hat):
    """``(||X - X_hat||_F^2, ||X||_F^2)`` for one trial."""
    X = np.asarray(X)
    return float(np.sum(np.abs(X - X_hat) ** 2)), float(np.sum(np.abs(X) ** 2))


def nmse(nums, dens):
    """Ratio of summed squared errors to summed channel energies over trials."""
    num, den = float(np.sum(nums)), float(np.sum(dens))
    if den <= 0:
        raise UndefinedMetricError("NMSE is undefined when every trial has X = 0")
    return num / den


def nmse_stderr(nums, dens):
    """Delta-method standard error of the ratio estimator :func:`nmse`."""
    a = np.asarray(nums, dtype=float)
    b = np.asarray(dens, dtype=float)
    n = a.size
    if n < 2:
        return float("nan")
    r = a.sum() / b.sum()
    resid = a - r * b
    return float(np.sqrt(np.var(resid, ddof=1) / n) / b.mean())


def to_db(x):
    with np.errstate(divide="ignore"):
        return float(10.0 * np.log10(x))


def detect_support(X_hat, theta_rel):
    """Columns whose norm is at least ``theta_rel`` times the largest column norm."""
    norms = np.linalg.norm(np.asarray(X_hat), axis=0)
    top = norms.max() if norms.size else 0.0
    if top <= 0:
        return np.array([], dtype=int)
    return np.flatnonzero(norms >= theta_rel * top)


def trial_metrics(X, X_hat, S, S_hat, iters=0, wall_time=0.0):
    num, den = squared_errors(X, X_hat)
    S = np.asarray(S, dtype=int)
    K = S.size
    if K:
        r, r_fa = srr(S, S_hat, K), srr(S, S_hat, K, "false_alarm")
    else:
        r = r_fa = float("nan")
    return TrialMetrics(srr=r, srr_fa=r_fa, nmse_num=num, nmse_den=den,
                        support_true=S, support_est=np.asarray(S_hat, dtype=int),
                        iters=iters, wall_time=wall_time)
