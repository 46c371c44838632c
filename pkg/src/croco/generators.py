"""Counterfactual generators: Wachter, PROBE and CROCO.

All three minimize a loss over the change ``delta`` by plain gradient descent
with a fixed learning rate, under a decreasing schedule of the proximity
weight ``lambda``:

* Wachter: ``l(f(x + d), 1) + lambda * |d|_1``; stops once the class flips.
* PROBE: adds ``max(G(x + d) - target, 0)`` where ``G`` is a first-order
  Gaussian approximation of the invalidation rate; stops once the class flips
  and ``G <= target``.
* CROCO: adds ``((soft_estimate(x + d) + m) / (1 - t) - target)^2``; stops
  once the class flips and the high-probability bound
  ``(m + soft_estimate) / (1 - t)`` is at most ``target``.

For each ``lambda`` value the inner loop runs at most ``max_inner_iters``
steps, after which ``lambda`` drops by ``lambda_decrement`` (floored at 0).
The run fails once the ``lambda = 0`` round (or ``max_outer_steps`` rounds)
is exhausted; the last iterate is still returned together with its bound.

Batches of instances are optimized in lockstep, one numpy pass per
iteration.  Every instance draws noise from its own stream, so its result
depends on the other members of its block only through floating-point
rounding in batched matrix products.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError, PreconditionError, ShapeError
from .nnmodel import probability
from .noise import GAUSSIAN, OPTIMIZATION_STREAM, NoiseSpec
from .robustness import DEFAULT_K, DEFAULT_M, RobustnessEstimate, upper_bound

logger = logging.getLogger(__name__)

WACHTER = "wachter"
PROBE = "probe"
CROCO = "croco"
METHODS = (WACHTER, PROBE, CROCO)

SQUARED = "squared"
CROSS_ENTROPY = "cross_entropy"

# norm of grad f below which the PROBE estimate degenerates to a step
_PROBE_GRAD_FLOOR = 1e-12
# rows per lockstep block
_BLOCK_ROWS = 1 << 16


@dataclass(frozen=True)
class GenerationConfig:
    method: str = CROCO
    target: float = 0.35
    noise: NoiseSpec | None = None
    K: int = DEFAULT_K
    m: float = DEFAULT_M
    learning_rate: float = 0.001
    lambda_init: float = 1.0
    lambda_decrement: float = 0.25
    max_inner_iters: int = 1000
    max_outer_steps: int | None = None
    validity_loss: str = CROSS_ENTROPY
    fixed_draws: bool = False
    allow_unreachable_target: bool = False
    record_trace: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not self.lambda_init >= 0:
            raise ConfigError(f"lambda_init must be >= 0, got {self.lambda_init}")
        if not self.lambda_decrement > 0:
            raise ConfigError(f"lambda_decrement must be > 0, got {self.lambda_decrement}")
        if not 0.0 < self.target < 1.0:
            raise ConfigError(f"target must lie in (0, 1), got {self.target}")
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if not self.m > 0:
            raise ConfigError(f"m must be > 0, got {self.m}")
        if self.max_inner_iters < 1:
            raise ConfigError(f"max_inner_iters must be >= 1, got {self.max_inner_iters}")
        if self.max_outer_steps is not None and self.max_outer_steps < 1:
            raise ConfigError(f"max_outer_steps must be >= 1, got {self.max_outer_steps}")
        if self.validity_loss not in (SQUARED, CROSS_ENTROPY):
            raise ConfigError(f"validity_loss must be '{SQUARED}' or '{CROSS_ENTROPY}'")
        if self.method == PROBE and self.noise is not None and self.noise.kind != GAUSSIAN:
            raise ConfigError("PROBE's invalidation estimate is only defined for gaussian noise")

    def check_reachable(self, threshold: float) -> None:
        """Reject CROCO targets the bound can never reach.

        The bound ``(m + soft) / (1 - t)`` is at least ``m / (1 - t)``, so a
        target at or below that value cannot be met.
        """
        if self.method != CROCO or self.allow_unreachable_target:
            return
        floor = float(upper_bound(0.0, self.m, threshold))
        if self.target <= floor:
            raise ConfigError(
                f"CROCO target {self.target} is unreachable: the bound (m + soft)/(1 - t) is at least "
                f"m/(1 - t) = {floor:.6g} for m={self.m}, t={threshold}; raise the target, lower m, "
                "or set allow_unreachable_target")


@dataclass
class GenerationResult:
    """Outcome for one instance.

    ``estimate`` holds the CROCO robustness estimate at exit (draws of the
    last iteration); ``probe_estimate`` the first-order estimate for PROBE.
    ``trace`` maps column names to per-iteration arrays when recorded.
    """

    method: str
    x: np.ndarray
    delta: np.ndarray
    converged: bool
    lam: float
    iterations: int
    instance: int = 0
    estimate: RobustnessEstimate | None = None
    probe_estimate: float | None = None
    trace: dict[str, np.ndarray] | None = field(default=None, repr=False)

    @property
    def x_cf(self) -> np.ndarray:
        return self.x + self.delta

    @property
    def distance(self) -> float:
        return float(np.abs(self.delta).sum())


def validity_loss(p_hat, target_class: int = 1, kind: str = CROSS_ENTROPY):
    """Loss between a predicted class-1 probability and the wanted class.

    Returns ``(value, d value / d p_hat)``; broadcasts over arrays.
    """
    p = np.asarray(p_hat, dtype=np.float64)
    y = float(target_class)
    if kind == SQUARED:
        return (p - y) ** 2, 2.0 * (p - y)
    if kind == CROSS_ENTROPY:
        if target_class == 1:
            return -np.log(p), -1.0 / p
        return -np.log1p(-p), 1.0 / (1.0 - p)
    raise ConfigError(f"unknown validity loss {kind!r}")


def _probe_terms(p, gz, variance, threshold, free):
    """First-order estimate ``Phi((t - f) / (std * |grad f|))`` and its gradient.

    For a ReLU network the logit gradient ``gz`` is locally constant, so the
    estimate depends on the input only through the logit ``z``:
    ``dG/dz = phi(u) * (-1 / (std * |gz|) - u * (1 - 2 f))``.
    """
    std = np.sqrt(variance)
    gnorm = np.linalg.norm(gz[:, free], axis=1)
    fnorm = p * (1.0 - p) * gnorm
    degenerate = fnorm < _PROBE_GRAD_FLOOR
    u = (threshold - p) / (std * np.maximum(fnorm, _PROBE_GRAD_FLOOR))
    value = ndtr(u)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        phi = np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)
        dz = phi * (-1.0 / (std * gnorm) - u * (1.0 - 2.0 * p))
    dz = np.where(degenerate | ~np.isfinite(dz), 0.0, dz)
    return value, dz[:, None] * gz


def probe_first_order_estimate(model, x_cf, variance: float, frozen=None) -> float:
    """Gaussian first-order approximation of the invalidation rate at ``x_cf``.

    Linearizing ``f`` around ``x_cf`` makes ``f(x_cf + eps)`` normal with
    standard deviation ``std * |grad f|`` (taken over non-frozen coordinates),
    giving ``Phi((t - f(x_cf)) / (std * |grad f|))``.
    """
    if not variance > 0:
        raise ConfigError(f"variance must be > 0, got {variance}")
    x = np.asarray(x_cf, dtype=np.float64)
    free = np.ones(x.shape[-1], dtype=bool) if frozen is None else ~np.asarray(frozen, dtype=bool)
    z, gz = model.logit_and_gradient(x[None, :])
    p = probability(z)
    value, _ = _probe_terms(p, gz, variance, model.threshold, free)
    return float(value[0])


@dataclass
class CrocoLoss:
    robustness: float
    validity: float
    proximity: float
    theta_tilde: float
    bound: float
    gradient: np.ndarray

    @property
    def total(self) -> float:
        return self.robustness + self.validity + self.proximity


def _soft_estimate_and_grad(model, x_cf, draws):
    """Soft invalidation estimate, its gradient, and the hard estimate.

    ``x_cf`` is ``(A, n)`` and ``draws`` ``(A, K, n)``.
    """
    mean_p, gamma, g = model.perturbed_statistics(x_cf, draws)
    return 1.0 - mean_p, -g, gamma


def croco_loss(model, x, delta, config: GenerationConfig, lam: float, draws) -> CrocoLoss:
    """CROCO objective at ``x + delta`` on fixed noise draws ``(K, n)``.

    The gradient is exact for the given draws; the L1 term contributes
    ``lam * sign(delta)`` (0 where ``delta == 0``).  Frozen coordinates get a
    zero gradient.
    """
    x = np.asarray(x, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    draws = np.asarray(draws, dtype=np.float64)
    t = model.threshold
    xc = (x + delta)[None, :]
    p, gp = model.forward_and_input_gradient(xc)
    v, dv = validity_loss(p, 1, config.validity_loss)
    theta, gtheta, _ = _soft_estimate_and_grad(model, xc, draws[None])
    bound = (theta + config.m) / (1.0 - t)
    rob = (bound - config.target) ** 2
    grad = dv[:, None] * gp + (2.0 * (bound - config.target) / (1.0 - t))[:, None] * gtheta
    grad = grad[0] + lam * np.sign(delta)
    if config.noise is not None:
        grad = np.where(config.noise.free_mask, grad, 0.0)
    return CrocoLoss(float(rob[0]), float(v[0]), float(lam * np.abs(delta).sum()),
                     float(theta[0]), float(bound[0]), grad)


_TRACE_COLUMNS = ("iteration", "lam", "validity", "robustness", "proximity", "theta", "bound", "probe")


class _Block:
    """Lockstep optimization state for a block of instances."""

    def __init__(self, model, X, config: GenerationConfig, instances):
        self.model, self.X, self.cfg = model, X, config
        self.instances = list(instances)
        B, n = X.shape
        noise = config.noise
        self.free = noise.free_mask if noise is not None else np.ones(n, dtype=bool)
        self.delta = np.zeros((B, n))
        self.lam = np.full(B, float(config.lambda_init))
        self.inner = np.zeros(B, dtype=np.int64)
        self.rounds = np.zeros(B, dtype=np.int64)
        self.iters = np.zeros(B, dtype=np.int64)
        self.active = np.ones(B, dtype=bool)
        self.converged = np.zeros(B, dtype=bool)
        self.final = [dict() for _ in range(B)]
        self.traces = [[] for _ in range(B)]
        self.rngs = self.fixed = None
        if config.method == CROCO:
            self.rngs = [noise.rng(i, OPTIMIZATION_STREAM) for i in self.instances]
            if config.fixed_draws:
                self.fixed = np.stack([noise.draw(r, config.K) for r in self.rngs])

    def _draws(self, idx):
        if self.fixed is not None:
            return self.fixed[idx]
        return np.stack([self.cfg.noise.draw(self.rngs[i], self.cfg.K) for i in idx])

    def _terms(self, idx):
        cfg, model, t = self.cfg, self.model, self.model.threshold
        delta = self.delta[idx]
        xc = self.X[idx] + delta
        z, gz = model.logit_and_gradient(xc)
        p = probability(z)
        gp = (p * (1.0 - p))[:, None] * gz
        v, dv = validity_loss(p, 1, cfg.validity_loss)
        grad = dv[:, None] * gp
        valid = p > t
        nan = np.full(len(idx), np.nan)
        out = {"validity": v, "proximity": self.lam[idx] * np.abs(delta).sum(axis=1),
               "robustness": nan, "theta": nan, "bound": nan, "probe": nan, "gamma": nan}
        if cfg.method == WACHTER:
            done = valid
        elif cfg.method == PROBE:
            est, gest = _probe_terms(p, gz, cfg.noise.variance, t, self.free)
            over = est > cfg.target
            grad = grad + np.where(over[:, None], gest, 0.0)
            out["robustness"] = np.maximum(est - cfg.target, 0.0)
            out["probe"] = est
            done = valid & ~over
        else:
            theta, gtheta, gamma = _soft_estimate_and_grad(model, xc, self._draws(idx))
            bound = (theta + cfg.m) / (1.0 - t)
            grad = grad + (2.0 * (bound - cfg.target) / (1.0 - t))[:, None] * gtheta
            out.update(robustness=(bound - cfg.target) ** 2, theta=theta, bound=bound, gamma=gamma)
            done = valid & (bound <= cfg.target)
        return grad, done, out

    def run(self) -> None:
        cfg = self.cfg
        while True:
            idx = np.flatnonzero(self.active)
            if not len(idx):
                return
            grad, done, out = self._terms(idx)
            if cfg.record_trace:
                for j, i in enumerate(idx):
                    self.traces[i].append((self.iters[i], self.lam[i], out["validity"][j], out["robustness"][j],
                                           out["proximity"][j], out["theta"][j], out["bound"][j], out["probe"][j]))
            # lambda schedule: a round ends after max_inner_iters steps
            exhausted = ~done & (self.inner[idx] >= cfg.max_inner_iters)
            failed = np.zeros_like(done)
            for j in np.flatnonzero(exhausted):
                i = idx[j]
                self.rounds[i] += 1
                if self.lam[i] <= 0.0 or (cfg.max_outer_steps is not None and self.rounds[i] >= cfg.max_outer_steps):
                    failed[j] = True
                else:
                    self.lam[i] = max(self.lam[i] - cfg.lambda_decrement, 0.0)
                    self.inner[i] = 0
            stop = done | failed
            for j in np.flatnonzero(stop):
                i = idx[j]
                self.final[i] = {k: out[k][j] for k in ("theta", "bound", "probe", "gamma")}
                self.converged[i] = bool(done[j])
                self.active[i] = False
            go = ~stop
            if not go.any():
                continue
            moving = idx[go]
            step = grad[go] + self.lam[moving][:, None] * np.sign(self.delta[moving])
            step = np.where(self.free, step, 0.0)
            self.delta[moving] -= cfg.learning_rate * step
            self.inner[moving] += 1
            self.iters[moving] += 1

    def results(self) -> list[GenerationResult]:
        cfg, t = self.cfg, self.model.threshold
        out = []
        for i, inst in enumerate(self.instances):
            fin = self.final[i]
            estimate = probe = None
            if cfg.method == CROCO:
                estimate = RobustnessEstimate.from_estimates(fin["gamma"], fin["theta"], cfg.K, cfg.m, t)
            elif cfg.method == PROBE:
                probe = float(fin["probe"])
            trace = None
            if cfg.record_trace:
                rows = np.array(self.traces[i], dtype=np.float64).reshape(-1, len(_TRACE_COLUMNS))
                trace = {name: rows[:, c] for c, name in enumerate(_TRACE_COLUMNS)}
            out.append(GenerationResult(cfg.method, self.X[i].copy(), self.delta[i].copy(),
                                        bool(self.converged[i]), float(self.lam[i]), int(self.iters[i]),
                                        inst, estimate, probe, trace))
        return out


def generate(model, X, config: GenerationConfig, instances=None) -> list[GenerationResult]:
    """Run ``config.method`` on every row of ``X`` (all must be classified 0).

    ``instances`` gives each row's index into the noise streams (defaults to
    ``0..len(X)-1``).  Rows are optimized in fixed-size lockstep blocks.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise ShapeError(f"expected inputs of dimension {model.n_features}, got {X.shape[1]}")
    if config.noise is not None and config.noise.n_features != X.shape[1]:
        raise ShapeError(f"noise has dimension {config.noise.n_features}, inputs have {X.shape[1]}")
    instances = list(range(len(X))) if instances is None else [int(i) for i in instances]
    if len(instances) != len(X):
        raise ShapeError(f"{len(instances)} instance ids for {len(X)} rows")
    positive = np.flatnonzero(model.predict_class(X) == 1)
    if len(positive):
        raise PreconditionError(f"counterfactuals are generated for class-0 inputs only; rows "
                                f"{positive[:10].tolist()} are already classified 1")
    if config.method != WACHTER and config.noise is None:
        raise ConfigError(f"method {config.method!r} needs a noise spec")
    config.check_reachable(model.threshold)
    block = max(1, _BLOCK_ROWS // config.K) if config.method == CROCO else 256
    results = []
    for start in range(0, len(X), block):
        runner = _Block(model, X[start:start + block], config, instances[start:start + block])
        runner.run()
        results.extend(runner.results())
    n_conv = sum(r.converged for r in results)
    logger.info("%s: %d/%d converged", config.method, n_conv, len(results))
    return results


def _generate_one(model, x, config, method, instance):
    if config.method != method:
        config = replace(config, method=method)
    return generate(model, np.asarray(x, dtype=np.float64)[None, :], config, [instance])[0]


def wachter_generate(model, x, config: GenerationConfig | None = None, instance: int = 0) -> GenerationResult:
    return _generate_one(model, x, config or GenerationConfig(method=WACHTER), WACHTER, instance)


def probe_generate(model, x, config: GenerationConfig, instance: int = 0) -> GenerationResult:
    return _generate_one(model, x, config, PROBE, instance)


def croco_generate(model, x, config: GenerationConfig, instance: int = 0) -> GenerationResult:
    """CROCO counterfactual for a single class-0 input."""
    return _generate_one(model, x, config, CROCO, instance)
