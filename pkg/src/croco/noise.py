"""Perturbation distributions placed around a counterfactual.

Draws are reproducible per ``(seed, instance, stream)``: each triple owns an
independent numpy generator, so processing instances in any order or in
parallel produces the same noise for each one.  Stream 0 is used during
optimization and stream 1 for evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

GAUSSIAN = "gaussian"
BALL = "ball"

OPTIMIZATION_STREAM = 0
EVALUATION_STREAM = 1


@dataclass(frozen=True)
class NoiseSpec:
    """Isotropic Gaussian (``variance``) or uniform ball (``radius``) noise.

    ``frozen`` marks coordinates that never receive noise; the same mask
    tells the generators which coordinates they may not change.
    """

    n_features: int
    kind: str = GAUSSIAN
    variance: float | None = None
    radius: float | None = None
    frozen: tuple[bool, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_features < 1:
            raise ConfigError(f"noise dimension must be >= 1, got {self.n_features}")
        if self.kind == GAUSSIAN:
            if self.variance is None or not self.variance > 0:
                raise ConfigError(f"gaussian noise needs variance > 0, got {self.variance}")
        elif self.kind == BALL:
            if self.radius is None or not self.radius > 0:
                raise ConfigError(f"ball noise needs radius > 0, got {self.radius}")
        else:
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        frozen = (False,) * self.n_features if self.frozen is None else tuple(bool(f) for f in self.frozen)
        if len(frozen) != self.n_features:
            raise ConfigError(f"frozen mask has length {len(frozen)}, expected {self.n_features}")
        if all(frozen):
            raise ConfigError("all dimensions are frozen; there is nothing to perturb")
        object.__setattr__(self, "frozen", frozen)

    @classmethod
    def gaussian(cls, variance: float, n_features: int, frozen=None, seed: int = 0) -> "NoiseSpec":
        return cls(n_features, GAUSSIAN, variance=variance, frozen=frozen, seed=seed)

    @classmethod
    def ball(cls, radius: float, n_features: int, frozen=None, seed: int = 0) -> "NoiseSpec":
        return cls(n_features, BALL, radius=radius, frozen=frozen, seed=seed)

    @property
    def free_mask(self) -> np.ndarray:
        return ~np.array(self.frozen, dtype=bool)

    @property
    def std(self) -> float:
        if self.kind != GAUSSIAN:
            raise ConfigError("standard deviation is only defined for gaussian noise")
        return float(np.sqrt(self.variance))

    def rng(self, instance: int = 0, stream: int = OPTIMIZATION_STREAM) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, instance, stream]))

    def draw(self, rng: np.random.Generator, K: int) -> np.ndarray:
        """``K`` perturbation vectors from ``rng``, zero on frozen coordinates."""
        if K < 1:
            raise ConfigError(f"number of samples must be >= 1, got {K}")
        free = self.free_mask
        d = int(free.sum())
        if self.kind == GAUSSIAN:
            eps = rng.standard_normal((K, d)) * self.std
        else:
            direction = rng.standard_normal((K, d))
            direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            eps = direction * (self.radius * rng.random(K) ** (1.0 / d))[:, None]
        if d == self.n_features:
            return eps
        out = np.zeros((K, self.n_features))
        out[:, free] = eps
        return out


def sample(spec: NoiseSpec, K: int, instance: int = 0, stream: int = OPTIMIZATION_STREAM) -> np.ndarray:
    """First ``K`` draws of the ``(spec.seed, instance, stream)`` sequence."""
    return spec.draw(spec.rng(instance, stream), K)
