"""Shared constructors for the test-suite."""

import numpy as np

from juice.gaussian import GaussianBelief


def random_pd(rng, M, floor=0.2):
    A = rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M))
    return A @ A.conj().T / M + floor * np.eye(M)


def random_belief(rng, M, scale=1.0):
    mean = rng.normal(size=M) + 1j * rng.normal(size=M)
    return GaussianBelief(mean, scale * random_pd(rng, M))


def crandn(rng, *shape):
    return (rng.normal(size=shape) + 1j * rng.normal(size=shape)) / np.sqrt(2)
