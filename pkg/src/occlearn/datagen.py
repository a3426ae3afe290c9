"""Synthetic data: Dirichlet-process mixtures, beta-process features, separable clusters."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

# Distinct spawn keys keep the three generators' streams independent for one seed.
_DP_KEY, _BP_KEY, _SEP_KEY = 1, 2, 3

BP_TAIL_MASS = 1e-4
BP_TAIL_CONFIDENCE = 0.9999


@dataclass(frozen=True)
class GenConfig:
    n_points: int
    dim: int = 16
    theta: float = 1.0
    noise_sd: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_points < 0:
            raise ValueError("n_points must be >= 0")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")

    def rng(self, key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(key,)))


class ClusterData(NamedTuple):
    points: np.ndarray
    labels: np.ndarray
    means: np.ndarray


class FeatureData(NamedTuple):
    points: np.ndarray
    Z: np.ndarray
    features: np.ndarray
    weights: np.ndarray
    rounds: int
    tail_bound: float


def stick_breaking_labels(rng: np.random.Generator, n: int, theta: float):
    """Cluster labels under DP(theta) stick-breaking, breaking sticks only as needed.

    Each point draws ``u ~ U(0, 1)`` and lands in the first stick whose
    cumulative weight exceeds ``u``; new ``Beta(1, theta)`` sticks are broken
    while ``u`` still falls in the unbroken remainder. Returns ``(labels, weights)``.
    """
    u = rng.random(n)
    weights: list[float] = []
    cum: list[float] = []
    remaining = 1.0
    top = u.max() if n else 0.0
    while not cum or cum[-1] <= top:
        v = rng.beta(1.0, theta)
        weights.append(remaining * v)
        remaining *= 1.0 - v
        cum.append(1.0 - remaining)
        if remaining == 0.0:
            break
    labels = np.minimum(np.searchsorted(np.array(cum), u, side="right"), len(cum) - 1)
    return labels.astype(np.int64), np.array(weights)


def gen_dp_mixture(cfg: GenConfig) -> ClusterData:
    """Gaussian clusters with DP(theta) proportions, ``mu_k ~ N(0, I)``, ``x ~ N(mu_z, noise_sd^2 I)``."""
    rng = cfg.rng(_DP_KEY)
    labels, weights = stick_breaking_labels(rng, cfg.n_points, cfg.theta)
    means = rng.standard_normal((len(weights), cfg.dim))
    points = means[labels] + cfg.noise_sd * rng.standard_normal((cfg.n_points, cfg.dim))
    return ClusterData(points, labels, means)


def bp_truncation_rounds(theta: float, tail_mass: float = BP_TAIL_MASS,
                         confidence: float = BP_TAIL_CONFIDENCE) -> int:
    """Rounds after which P(remaining weight >= tail_mass) <= 1 - confidence.

    The weight left after ``R`` rounds has mean ``theta * (theta / (1 + theta))**R``;
    Markov's inequality turns that into the stated certificate.
    """
    ratio = theta / (1.0 + theta)
    target = tail_mass * (1.0 - confidence) / theta
    return max(1, math.ceil(math.log(target) / math.log(ratio)))


def bp_tail_bound(theta: float, rounds: int, tail_mass: float = BP_TAIL_MASS) -> float:
    """Markov upper bound on P(remaining weight >= tail_mass) after ``rounds`` rounds."""
    return theta * (theta / (1.0 + theta)) ** rounds / tail_mass


def bp_weights(rng: np.random.Generator, theta: float, rounds: int) -> np.ndarray:
    """Round-based beta-process stick-breaking.

    Round ``i`` adds ``Poisson(theta)`` atoms, each with weight
    ``V_i * prod_{l<i} (1 - V_l)`` over its own ``Beta(1, theta)`` draws.
    The expected total weight is ``theta``.
    """
    out = []
    for i in range(1, rounds + 1):
        c = rng.poisson(theta)
        if c == 0:
            continue
        v = rng.beta(1.0, theta, size=(c, i))
        out.append(v[:, -1] * np.prod(1.0 - v[:, :-1], axis=1))
    return np.concatenate(out) if out else np.empty(0)


def gen_bp_features(cfg: GenConfig) -> FeatureData:
    """Latent-feature data: ``z_ik ~ Bernoulli(w_k)``, ``f_k ~ N(0, I)``, ``x ~ N(z F, noise_sd^2 I)``."""
    rng = cfg.rng(_BP_KEY)
    rounds = bp_truncation_rounds(cfg.theta)
    w = bp_weights(rng, cfg.theta, rounds)
    features = rng.standard_normal((len(w), cfg.dim))
    Z = (rng.random((cfg.n_points, len(w))) < w).astype(np.uint8)
    points = Z @ features + cfg.noise_sd * rng.standard_normal((cfg.n_points, cfg.dim))
    return FeatureData(points, Z, features, w, rounds, bp_tail_bound(cfg.theta, rounds))


def uniform_ball(rng: np.random.Generator, n: int, dim: int, radius: float) -> np.ndarray:
    """Uniform points strictly inside the ball: direction on the sphere, radius ``r * U**(1/dim)``."""
    out = np.empty((n, dim))
    todo = np.arange(n)
    while len(todo):
        g = rng.standard_normal((len(todo), dim))
        norms = np.linalg.norm(g, axis=1)
        r = radius * rng.random(len(todo)) ** (1.0 / dim)
        cand = g * (r / np.where(norms > 0, norms, 1.0))[:, None]
        good = (norms > 0) & (np.linalg.norm(cand, axis=1) < radius)
        out[todo[good]] = cand[good]
        todo = todo[~good]
    return out


def gen_separable_clusters(cfg: GenConfig) -> ClusterData:
    """DP(theta) proportions, means ``(2k, 0, ..., 0)`` for k = 1, 2, ..., points uniform in radius-1/2 balls.

    Points of one cluster are within distance 1 of each other and more than 1
    away from any other cluster's points.
    """
    rng = cfg.rng(_SEP_KEY)
    labels, weights = stick_breaking_labels(rng, cfg.n_points, cfg.theta)
    means = np.zeros((len(weights), cfg.dim))
    means[:, 0] = 2.0 * np.arange(1, len(weights) + 1)
    points = means[labels] + uniform_ball(rng, cfg.n_points, cfg.dim, 0.5)
    return ClusterData(points, labels, means)


GENERATORS = {
    "mixture": gen_dp_mixture,
    "bp": gen_bp_features,
    "separable": gen_separable_clusters,
}
