"""Monte-Carlo invalidation estimators and the high-probability bound built on them.

For a counterfactual ``x_cf`` and noise ``eps ~ p``:

* the invalidation rate is ``P(h(x_cf + eps) = 0)``, estimated by the
  fraction of perturbed points classified 0;
* the soft invalidation rate is ``E[1 - f(x_cf + eps)]``, estimated by the
  mean class-0 probability over the same draws.

Because ``1 - f >= 1 - t`` wherever the class is 0, the soft rate divided by
``1 - t`` dominates the invalidation rate, and Hoeffding's inequality gives

    P(invalidation <= (m + soft_estimate) / (1 - t)) >= 1 - exp(-2 m^2 K).

The module also carries a deterministic quadrature oracle for low
dimensional checks of both estimators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.special import ndtr, roots_legendre

from .errors import ConfigError, ShapeError
from .noise import BALL, EVALUATION_STREAM, GAUSSIAN, NoiseSpec

DEFAULT_K = 500
DEFAULT_M = 0.1
DEFAULT_THRESHOLD = 0.5

_CHUNK = 1 << 18


def upper_bound(theta_tilde, m: float = DEFAULT_M, t: float = DEFAULT_THRESHOLD):
    """``(m + theta_tilde) / (1 - t)``; works elementwise on arrays."""
    if not t < 1.0:
        raise ConfigError(f"decision threshold must be < 1 for the bound to exist, got {t}")
    if not m > 0.0:
        raise ConfigError(f"tightness m must be > 0, got {m}")
    return (m + theta_tilde) / (1.0 - t)


def confidence(m: float, K: int) -> float:
    """Probability ``1 - exp(-2 m^2 K)`` that the bound holds."""
    if not m > 0.0:
        raise ConfigError(f"tightness m must be > 0, got {m}")
    if K < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    return float(-math.expm1(-2.0 * m * m * K))


def min_samples(m: float, required_confidence: float) -> int:
    """Smallest K with ``confidence(m, K) >= required_confidence``."""
    if not m > 0.0:
        raise ConfigError(f"tightness m must be > 0, got {m}")
    if not 0.0 < required_confidence < 1.0:
        raise ConfigError(f"confidence must lie in (0, 1), got {required_confidence}")
    K = max(1, math.ceil(-math.log1p(-required_confidence) / (2.0 * m * m) - 1e-9))
    while confidence(m, K) < required_confidence:
        K += 1
    return K


def bound_table(ms: Iterable[float], confidences: Iterable[float]) -> list[dict]:
    """Required K for every (m, confidence) pair."""
    confidences = list(confidences)
    return [{"m": m, "confidence": c, "K": min_samples(m, c)} for m in ms for c in confidences]


@dataclass(frozen=True)
class RobustnessEstimate:
    gamma_tilde: float
    theta_tilde: float
    K: int
    m: float
    threshold: float
    upper_bound: float
    confidence: float

    @classmethod
    def from_estimates(cls, gamma_tilde: float, theta_tilde: float, K: int, m: float = DEFAULT_M,
                       threshold: float = DEFAULT_THRESHOLD) -> "RobustnessEstimate":
        return cls(float(gamma_tilde), float(theta_tilde), int(K), float(m), float(threshold),
                   float(upper_bound(theta_tilde, m, threshold)), confidence(m, K))


def _as_point(model, x_cf) -> np.ndarray:
    x = np.asarray(x_cf, dtype=np.float64)
    if x.shape != (model.n_features,):
        raise ShapeError(f"expected a point of dimension {model.n_features}, got shape {x.shape}")
    return x


def _mc_sums(model, x_cf, spec: NoiseSpec, K: int, instance: int, stream: int, draws):
    """Counts of class-0 points and sums of class-0 probability over K draws."""
    x = _as_point(model, x_cf)
    if spec.n_features != x.shape[0]:
        raise ShapeError(f"noise has dimension {spec.n_features}, point has {x.shape[0]}")
    if draws is not None:
        p = model.forward(x + np.asarray(draws))
        return float(np.sum(p <= model.threshold)), float(np.sum(1.0 - p)), len(p)
    if K < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    rng = spec.rng(instance, stream)
    invalid = soft = 0.0
    for start in range(0, K, _CHUNK):
        p = model.forward(x + spec.draw(rng, min(_CHUNK, K - start)))
        invalid += np.sum(p <= model.threshold)
        soft += np.sum(1.0 - p)
    return float(invalid), float(soft), K


def invalidation_rate_mc(model, x_cf, spec: NoiseSpec, K: int = DEFAULT_K, instance: int = 0,
                         stream: int = EVALUATION_STREAM, draws=None) -> float:
    """Fraction of ``K`` perturbed copies of ``x_cf`` the model classifies 0.

    Pass ``draws`` to evaluate on fixed perturbations instead of drawing
    from ``spec``.
    """
    invalid, _, k = _mc_sums(model, x_cf, spec, K, instance, stream, draws)
    return invalid / k


def soft_invalidation_mc(model, x_cf, spec: NoiseSpec, K: int = DEFAULT_K, instance: int = 0,
                         stream: int = EVALUATION_STREAM, draws=None) -> float:
    """Mean class-0 probability over ``K`` perturbed copies of ``x_cf``."""
    _, soft, k = _mc_sums(model, x_cf, spec, K, instance, stream, draws)
    return soft / k


def estimate(model, x_cf, spec: NoiseSpec, K: int = DEFAULT_K, m: float = DEFAULT_M,
             instance: int = 0, stream: int = EVALUATION_STREAM, draws=None) -> RobustnessEstimate:
    """Both estimators from one set of draws, with the resulting bound."""
    invalid, soft, k = _mc_sums(model, x_cf, spec, K, instance, stream, draws)
    return RobustnessEstimate.from_estimates(invalid / k, soft / k, k, m, model.threshold)


@dataclass(frozen=True)
class QuadratureResult:
    gamma: float
    theta: float
    truncation_mass: float
    n_nodes: int


def _composite_legendre(a: float, b: float, nodes: int, order: int = 4):
    panels = max(1, nodes // order)
    x, w = roots_legendre(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    pts = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wts = (half[:, None] * w[None, :]).ravel()
    return pts, wts


def _tensor(points: list[np.ndarray], weights: list[np.ndarray]):
    grids = np.meshgrid(*points, indexing="ij")
    wgrid = np.meshgrid(*weights, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1), np.prod([w.ravel() for w in wgrid], axis=0)


def _gaussian_nodes(spec: NoiseSpec, d: int, nodes: int, width: float):
    s = spec.std
    pts, wts = _composite_legendre(-width * s, width * s, nodes)
    wts = wts * np.exp(-0.5 * (pts / s) ** 2) / (s * math.sqrt(2.0 * math.pi))
    eps, w = _tensor([pts] * d, [wts] * d)
    truncation = 1.0 - (1.0 - 2.0 * ndtr(-width)) ** d
    return eps, w, truncation


def _ball_nodes(spec: NoiseSpec, d: int, nodes: int):
    r = spec.radius
    if d == 1:
        pts, wts = _composite_legendre(-r, r, nodes)
        return pts[:, None], wts / (2.0 * r)
    rho, w_rho = _composite_legendre(0.0, r, nodes)
    if d == 2:
        phi, w_phi = _composite_legendre(0.0, 2.0 * math.pi, nodes)
        grid, w = _tensor([rho, phi], [w_rho * rho, w_phi])
        rr, pp = grid.T
        eps = np.stack([rr * np.cos(pp), rr * np.sin(pp)], axis=1)
        return eps, w / (math.pi * r * r)
    theta, w_theta = _composite_legendre(0.0, math.pi, nodes)
    phi, w_phi = _composite_legendre(0.0, 2.0 * math.pi, nodes)
    grid, w = _tensor([rho, theta, phi], [w_rho * rho ** 2, w_theta * np.sin(theta), w_phi])
    rr, tt, pp = grid.T
    eps = np.stack([rr * np.sin(tt) * np.cos(pp), rr * np.sin(tt) * np.sin(pp), rr * np.cos(tt)], axis=1)
    return eps, w / (4.0 / 3.0 * math.pi * r ** 3)


_DEFAULT_NODES = {1: 4096, 2: 1024, 3: 128}


def brute_force_invalidation(model, x_cf, spec: NoiseSpec, grid_resolution: int | None = None,
                             width: float = 6.0) -> QuadratureResult:
    """Invalidation and soft invalidation rates by tensor-product quadrature.

    Only for at most three free (non-frozen) dimensions.  Gaussian noise is
    integrated over ``[-width*std, width*std]`` per free dimension with
    composite 4-point Gauss-Legendre panels and the neglected tail mass is
    reported; ball noise is integrated exactly over its support in polar or
    spherical coordinates.  ``grid_resolution`` is the node count per
    dimension.
    """
    x = _as_point(model, x_cf)
    free = spec.free_mask
    d = int(free.sum())
    if d > 3:
        raise ConfigError(f"quadrature oracle supports at most 3 free dimensions, got {d}")
    nodes = grid_resolution or _DEFAULT_NODES[d]
    if spec.kind == GAUSSIAN:
        eps, w, truncation = _gaussian_nodes(spec, d, nodes, width)
    elif spec.kind == BALL:
        (eps, w), truncation = _ball_nodes(spec, d, nodes), 0.0
    else:  # pragma: no cover - NoiseSpec validates kind
        raise ConfigError(spec.kind)
    gamma = theta = 0.0
    for start in range(0, len(w), _CHUNK):
        pts = np.tile(x, (min(_CHUNK, len(w) - start), 1))
        pts[:, free] += eps[start:start + _CHUNK]
        p = model.forward(pts)
        wc = w[start:start + _CHUNK]
        gamma += float(wc @ (p <= model.threshold))
        theta += float(wc @ (1.0 - p))
    return QuadratureResult(gamma, theta, float(truncation), len(w))
