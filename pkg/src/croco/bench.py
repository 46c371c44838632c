"""Benchmark sweeps over (method, noise variance, target) and their CSV artifacts.

A sweep produces one :class:`SweepRecord` per generated counterfactual and
grid cell.  Wachter has no target parameter, so it runs once per instance and
is evaluated under every noise variance of the grid; its ``target`` is NA.

Four emitters turn records into CSV files: per-cell trade-off statistics, a
validity grid, per-counterfactual (target, measured invalidation) pairs and
per-counterfactual (bound, measured invalidation) pairs.  Every float is
written with 6 significant digits and missing values as ``NA``, with rows
sorted by method, variance, target and instance so reruns are byte-identical.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import normalize, split, synth_two_gaussians
from .errors import ConfigError
from .generators import CROCO, METHODS, PROBE, WACHTER, GenerationConfig, GenerationResult, generate
from .noise import EVALUATION_STREAM, OPTIMIZATION_STREAM, NoiseSpec
from .nnmodel import train
from .robustness import DEFAULT_K, DEFAULT_M, _mc_sums, upper_bound

logger = logging.getLogger(__name__)

NA = "NA"
DEFAULT_K_EVAL = 10_000


@dataclass(frozen=True)
class SweepRecord:
    method: str
    sigma2: float | None
    target: float | None
    instance: int
    validity: int
    distance: float
    gamma_eval: float
    bound: float
    converged: bool

    def __post_init__(self):
        if self.validity not in (0, 1):
            raise ValueError(f"validity must be 0 or 1, got {self.validity}")
        if not self.distance >= 0.0:
            raise ValueError(f"distance must be >= 0, got {self.distance}")
        if not 0.0 <= self.gamma_eval <= 1.0:
            raise ValueError(f"gamma_eval must lie in [0, 1], got {self.gamma_eval}")


def evaluate(model, x, result: GenerationResult, K_eval: int = DEFAULT_K_EVAL, spec: NoiseSpec | None = None,
             m: float = DEFAULT_M, K: int = DEFAULT_K, target: float | None = None) -> SweepRecord:
    """Score one counterfactual.

    ``gamma_eval`` is the invalidation rate over ``K_eval`` draws from the
    evaluation stream, which never overlaps the draws used while optimizing.
    The bound is CROCO's own final estimate when present; otherwise it is
    computed from ``K`` optimization-stream draws at the final point.
    """
    if spec is None:
        raise ConfigError("evaluate needs the noise spec the counterfactual is judged under")
    x = np.asarray(x, dtype=np.float64)
    x_cf = x + result.delta
    validity = int(model.predict_class(x_cf) != model.predict_class(x))
    invalid, _, k = _mc_sums(model, x_cf, spec, K_eval, result.instance, EVALUATION_STREAM, None)
    if result.estimate is not None:
        bound = result.estimate.upper_bound
    else:
        _, soft, k_opt = _mc_sums(model, x_cf, spec, K, result.instance, OPTIMIZATION_STREAM, None)
        bound = float(upper_bound(soft / k_opt, m, model.threshold))
    sigma2 = spec.variance if spec.kind == "gaussian" else None
    return SweepRecord(result.method, sigma2, target, result.instance, validity,
                       result.distance, invalid / k, bound, result.converged)


@dataclass
class SyntheticBenchmark:
    dataset: object
    model: object
    train_accuracy: float
    test_accuracy: float
    X: np.ndarray
    instances: np.ndarray


def synthetic_benchmark(n_instances: int = 200, n_samples: int = 2000, separation: float = 4.0,
                        hidden: Sequence[int] = (32,), learning_rate: float = 0.1, epochs: int = 100,
                        seed: int = 0) -> SyntheticBenchmark:
    """Desk-scale substrate: two normalized Gaussian blobs and a trained classifier.

    The instances to explain are the first ``n_instances`` rows (of the full
    dataset) that the model classifies 0; their row numbers double as noise
    stream ids.  A single hidden layer avoids the dead-ReLU plateaus that
    leave deeper nets with zero input gradient on part of the class-0 region.
    """
    ds = normalize(synth_two_gaussians(n_samples, separation, seed=seed))
    tr, te = split(ds, 0.75, seed=seed)
    model, report = train(tr.X, tr.y, hidden=hidden, learning_rate=learning_rate, epochs=epochs, seed=seed,
                          X_test=te.X, y_test=te.y)
    rows = np.flatnonzero(model.predict_class(ds.X) == 0)[:n_instances]
    return SyntheticBenchmark(ds, model, report.train_accuracy, report.test_accuracy, ds.X[rows], rows)


def _cells(methods, sigma2_grid, target_grid):
    for method in methods:
        if method == WACHTER:
            yield method, None, None
            continue
        for s2 in sigma2_grid:
            for target in target_grid:
                yield method, s2, target


def _run_cell(args) -> list[SweepRecord]:
    model, X, instances, method, s2, target, template, sigma2_grid, base_seed, K_eval, frozen = args
    n = X.shape[1]
    noise = None if s2 is None else NoiseSpec.gaussian(s2, n, frozen=frozen, seed=base_seed)
    cfg = replace(template, method=method, noise=noise, record_trace=False,
                  target=target if target is not None else template.target)
    results = generate(model, X, cfg, instances)
    out = []
    for x, res in zip(X, results):
        if method == WACHTER:
            for v in sigma2_grid:
                spec = NoiseSpec.gaussian(v, n, frozen=frozen, seed=base_seed)
                out.append(evaluate(model, x, res, K_eval, spec, template.m, template.K))
        else:
            out.append(evaluate(model, x, res, K_eval, noise, template.m, template.K, target))
    logger.info("cell %s sigma2=%s target=%s: %d/%d converged", method, s2, target,
                sum(r.converged for r in results), len(results))
    return out


def run_sweep(model, X, sigma2_grid: Sequence[float], target_grid: Sequence[float],
              methods: Sequence[str] = METHODS, base_seed: int = 0, config: GenerationConfig | None = None,
              K_eval: int = DEFAULT_K_EVAL, instances: Sequence[int] | None = None, frozen=None,
              jobs: int = 1) -> list[SweepRecord]:
    """Generate and score counterfactuals for every cell of the grid.

    ``config`` supplies everything but method, noise and target.  Noise for
    instance ``i`` comes from stream ``(base_seed, i, .)``, so the records do
    not depend on ``jobs``.  Records are returned in emitter order.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if not len(X):
        raise ConfigError("sweep needs at least one instance")
    methods = list(methods)
    bad = [mth for mth in methods if mth not in METHODS]
    if bad or not methods:
        raise ConfigError(f"methods must be a non-empty subset of {METHODS}, got {methods}")
    sigma2_grid = sorted(float(s) for s in sigma2_grid)
    target_grid = sorted(float(t) for t in target_grid)
    if not sigma2_grid:
        raise ConfigError("sigma2 grid is empty")
    if not target_grid and any(mth in (PROBE, CROCO) for mth in methods):
        raise ConfigError("target grid is empty")
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    template = config or GenerationConfig()
    if CROCO in methods:
        for target in target_grid:
            replace(template, target=target, noise=NoiseSpec.gaussian(sigma2_grid[0], X.shape[1])) \
                .check_reachable(model.threshold)
    instances = list(range(len(X))) if instances is None else [int(i) for i in instances]
    tasks = [(model, X, instances, mth, s2, tg, template, sigma2_grid, base_seed, K_eval, frozen)
             for mth, s2, tg in _cells(methods, sigma2_grid, target_grid)]
    if jobs == 1 or len(tasks) == 1:
        chunks = [_run_cell(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            chunks = list(pool.map(_run_cell, tasks))
    return sort_records([r for chunk in chunks for r in chunk])


def _key(value):
    # NA sorts after every number
    return (value is None, value if value is not None else 0.0)


def sort_records(records: Iterable[SweepRecord]) -> list[SweepRecord]:
    return sorted(records, key=lambda r: (r.method, _key(r.sigma2), _key(r.target), r.instance))


def fmt(value) -> str:
    """6 significant digits; None and NaN become NA."""
    if value is None:
        return NA
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return NA
    return f"{value:.6g}"


def _write(path, header: list[str], rows: list[list]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([[fmt(v) for v in row] for row in rows])
    return path


def _require(records) -> list[SweepRecord]:
    records = sort_records(records)
    if not records:
        raise ValueError("no sweep records to emit")
    return records


def _groups(records, key):
    groups: dict = {}
    for r in records:
        groups.setdefault(key(r), []).append(r)
    return groups


def _sd(values) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else float("nan")


TRADEOFF_COLUMNS = ["method", "sigma2", "target", "n", "validity_pct", "converged_pct",
                    "distance_mean", "distance_sd", "gamma_eval_mean", "gamma_eval_sd"]


def tradeoff_rows(records) -> list[list]:
    records = _require(records)
    rows = []
    for (method, s2, target), group in _groups(records, lambda r: (r.method, r.sigma2, r.target)).items():
        dist = [r.distance for r in group]
        gam = [r.gamma_eval for r in group]
        rows.append([method, s2, target, len(group),
                     100.0 * np.mean([r.validity for r in group]),
                     100.0 * np.mean([r.converged for r in group]),
                     float(np.mean(dist)), _sd(dist), float(np.mean(gam)), _sd(gam)])
    return rows


def emit_tradeoff(records, path) -> Path:
    """Per (method, sigma2, target) cell: mean and sample sd of distance and gamma_eval."""
    return _write(path, TRADEOFF_COLUMNS, tradeoff_rows(records))


def emit_validity_heatmap(records, path) -> Path:
    """Percent validity with one row per (method, sigma2) and one column per target."""
    records = _require(records)
    targets = sorted({r.target for r in records}, key=_key)
    header = ["method", "sigma2"] + [f"target={fmt(t)}" for t in targets]
    rows = []
    for (method, s2), group in _groups(records, lambda r: (r.method, r.sigma2)).items():
        by_target = _groups(group, lambda r: r.target)
        rows.append([method, s2] + [100.0 * np.mean([r.validity for r in by_target[t]]) if t in by_target
                                    else None for t in targets])
    return _write(path, header, rows)


def emit_target_comparison(records, path) -> Path:
    """One row per counterfactual generated for a target: (target, gamma_eval)."""
    records = [r for r in _require(records) if r.target is not None]
    if not records:
        raise ValueError("no records carry a target (Wachter-only sweep)")
    return _write(path, ["method", "sigma2", "target", "instance", "converged", "gamma_eval"],
                  [[r.method, r.sigma2, r.target, r.instance, r.converged, r.gamma_eval] for r in records])


def emit_bound_check(records, path) -> Path:
    """One row per counterfactual: its bound, measured gamma_eval and whether the bound was exceeded."""
    records = [r for r in _require(records) if math.isfinite(r.bound)]
    if not records:
        raise ValueError("no records carry a finite bound")
    return _write(path, ["method", "sigma2", "target", "instance", "bound", "gamma_eval", "exceeded"],
                  [[r.method, r.sigma2, r.target, r.instance, r.bound, r.gamma_eval,
                    int(r.gamma_eval > r.bound)] for r in records])


ARTIFACTS = {
    "tradeoff.csv": emit_tradeoff,
    "validity_heatmap.csv": emit_validity_heatmap,
    "target_comparison.csv": emit_target_comparison,
    "bound_check.csv": emit_bound_check,
}


def emit_all(records, out_dir) -> list[Path]:
    """Write every artifact that has data; target comparison is skipped for Wachter-only sweeps."""
    records = _require(records)
    paths = []
    for name, emit in ARTIFACTS.items():
        if name == "target_comparison.csv" and all(r.target is None for r in records):
            continue
        paths.append(emit(records, Path(out_dir) / name))
    return paths


def records_to_rows(records) -> tuple[list[str], list[list]]:
    header = ["method", "sigma2", "target", "instance", "validity", "distance", "gamma_eval", "bound", "converged"]
    return header, [[r.method, r.sigma2, r.target, r.instance, r.validity, r.distance, r.gamma_eval,
                     r.bound, r.converged] for r in sort_records(records)]


def emit_records(records, path) -> Path:
    return _write(path, *records_to_rows(_require(records)))
