"""Command-line entry point: ``croco {train,generate,sweep,bound-table,evaluate}``.

Every command except ``bound-table`` reads one JSON run configuration::

    {
      "data": {"synthetic": {"n": 2000, "separation": 4.0, "seed": 0}},
      "model": {"train": {"hidden": [50, 50], "epochs": 100}},
      "methods": ["wachter", "probe", "croco"],
      "sigma2": [0.005, 0.02],
      "targets": [0.35],
      "instances": {"count": 100, "source": "test"},
      "out": "results"
    }

``data`` is either ``{"csv": ..., "schema": ...}`` or ``{"synthetic": {...}}``
and ``model`` either ``{"path": ...}`` or ``{"train": {...}}``.  Remaining
keys default to K=500, m=0.1, t=0.5, learning rate 0.001, lambda 1 with
decrement 0.25.  Exit codes: 0 success, 2 configuration or input error
(including a missing input file), 3 runtime failure.  ``CROCO_LOG`` sets the
log level (default WARNING).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import bench
from .data import FeatureSchema, denormalize, load_csv, normalize, split, synth_two_gaussians
from .errors import ConfigError, CrocoError, DataError, PreconditionError, SchemaError, WeightFileError
from .generators import CROSS_ENTROPY, METHODS, GenerationConfig, GenerationResult, generate
from .nnmodel import MlpClassifier, load_weights, save_weights, train
from .noise import NoiseSpec
from .robustness import bound_table

logger = logging.getLogger("croco")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

_TRAIN_KEYS = {"hidden", "learning_rate", "epochs", "batch_size", "seed"}
_SYNTH_KEYS = {"n", "separation", "seed", "scale"}


@dataclass
class RunConfig:
    data: dict
    model: dict
    methods: list = field(default_factory=lambda: list(METHODS))
    sigma2: list = field(default_factory=lambda: [0.005, 0.01, 0.015, 0.02])
    targets: list = field(default_factory=lambda: [0.35])
    K: int = 500
    m: float = 0.1
    threshold: float = 0.5
    learning_rate: float = 0.001
    lambda_init: float = 1.0
    lambda_decrement: float = 0.25
    max_inner_iters: int = 1000
    validity_loss: str = CROSS_ENTROPY
    allow_unreachable_target: bool = False
    seed: int = 0
    split: dict = field(default_factory=lambda: {"train_fraction": 0.75, "seed": 0})
    instances: dict = field(default_factory=lambda: {"count": 100, "source": "test"})
    K_eval: int = bench.DEFAULT_K_EVAL
    out: str = "results"

    @classmethod
    def from_dict(cls, doc: dict, base: Path = Path(".")) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config: top level must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"config: unknown field(s) {unknown}; allowed: {sorted(known)}")
        for name in ("data", "model"):
            if name not in doc:
                raise ConfigError(f"config: missing required field '{name}'")
        cfg = cls(**doc)
        cfg._resolve_paths(base)
        try:
            cfg.validate()
        except (TypeError, ValueError, AttributeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"config: malformed value ({exc})") from exc
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc, path.parent)

    def _resolve_paths(self, base: Path) -> None:
        for section, keys in ((self.data, ("csv", "schema")), (self.model, ("path",))):
            if isinstance(section, dict):
                for k in keys:
                    if isinstance(section.get(k), str):
                        section[k] = str(base / section[k])

    def validate(self) -> None:
        if not isinstance(self.data, dict) or (("csv" in self.data) + ("synthetic" in self.data)) != 1:
            raise ConfigError("config field 'data': give exactly one of {'csv': ..., 'schema': ...} "
                              "or {'synthetic': {...}}")
        if "csv" in self.data and "schema" not in self.data:
            raise ConfigError("config field 'data': a CSV source also needs 'schema'")
        if "synthetic" in self.data:
            extra = set(self.data["synthetic"]) - _SYNTH_KEYS
            if extra:
                raise ConfigError(f"config field 'data.synthetic': unknown keys {sorted(extra)}")
        if not isinstance(self.model, dict) or (("path" in self.model) + ("train" in self.model)) != 1:
            raise ConfigError("config field 'model': give exactly one of {'path': ...} or {'train': {...}}")
        if "train" in self.model:
            extra = set(self.model["train"]) - _TRAIN_KEYS
            if extra:
                raise ConfigError(f"config field 'model.train': unknown keys {sorted(extra)}")
        if ({"probe", "croco"} & set(self.methods)) and not self.targets:
            raise ConfigError("config field 'targets': PROBE and CROCO need at least one target")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"config field 'methods': must be a non-empty subset of {list(METHODS)}")
        if not self.sigma2 or any(not (isinstance(v, (int, float)) and v > 0) for v in self.sigma2):
            raise ConfigError("config field 'sigma2': needs positive variances")
        if not 0.0 <= self.threshold < 1.0:
            raise ConfigError(f"config field 'threshold': must lie in [0, 1), got {self.threshold}")
        if self.K_eval < 1:
            raise ConfigError(f"config field 'K_eval': must be >= 1, got {self.K_eval}")
        if self.instances.get("source", "test") not in ("test", "all"):
            raise ConfigError("config field 'instances.source': must be 'test' or 'all'")
        if int(self.instances.get("count", 1)) < 1:
            raise ConfigError("config field 'instances.count': must be >= 1")
        # constructing every generation config runs the generators' own checks,
        # including the unreachable-target rule
        for method in self.methods:
            for target in (self.targets if method != "wachter" else [0.35]):
                self.generation(method, self.sigma2[0], target, 1).check_reachable(self.threshold)

    def generation(self, method: str, sigma2: float | None, target: float, n_features: int,
                   frozen=None) -> GenerationConfig:
        noise = None if sigma2 is None else NoiseSpec.gaussian(sigma2, n_features, frozen=frozen, seed=self.seed)
        try:
            return GenerationConfig(method=method, target=target, noise=noise, K=self.K, m=self.m,
                                    learning_rate=self.learning_rate, lambda_init=self.lambda_init,
                                    lambda_decrement=self.lambda_decrement, max_inner_iters=self.max_inner_iters,
                                    validity_loss=self.validity_loss,
                                    allow_unreachable_target=self.allow_unreachable_target)
        except ConfigError as exc:
            raise ConfigError(f"config: {exc}") from exc


@dataclass
class Workspace:
    dataset: object
    train: object
    test: object
    model: MlpClassifier


def _load_data(cfg: RunConfig):
    if "csv" in cfg.data:
        schema = FeatureSchema.from_json(cfg.data["schema"])
        ds = load_csv(cfg.data["csv"], schema)
    else:
        ds = synth_two_gaussians(**cfg.data["synthetic"])
    return normalize(ds)


def _workspace(cfg: RunConfig, require_model: bool = True) -> Workspace:
    ds = _load_data(cfg)
    tr, te = split(ds, float(cfg.split.get("train_fraction", 0.75)), int(cfg.split.get("seed", 0)))
    model = None
    if "path" in cfg.model:
        model = load_weights(cfg.model["path"])
        if model.n_features != ds.n_features:
            raise ConfigError(f"model expects {model.n_features} features, data has {ds.n_features}")
        if model.threshold != cfg.threshold:
            model = replace(model, threshold=cfg.threshold)
    elif require_model:
        model, _ = _train(cfg, tr, te)
    return Workspace(ds, tr, te, model)


def _train(cfg: RunConfig, tr, te):
    params = dict(cfg.model["train"])
    params.setdefault("seed", cfg.seed)
    if "hidden" in params:
        params["hidden"] = tuple(params["hidden"])
    return train(tr.X, tr.y, threshold=cfg.threshold, X_test=te.X, y_test=te.y, **params)


def _select(ws: Workspace, cfg: RunConfig, rows: list[int] | None):
    """Rows to explain (indices into the chosen source) and their ids."""
    source = ws.test if cfg.instances.get("source", "test") == "test" else ws.dataset
    if rows is not None:
        bad = [r for r in rows if not 0 <= r < len(source)]
        if bad:
            raise ConfigError(f"instance indices {bad} out of range for {len(source)} rows")
        return source.X[rows], np.asarray(rows)
    negative = np.flatnonzero(ws.model.predict_class(source.X) == 0)[: int(cfg.instances.get("count", 100))]
    if not len(negative):
        raise PreconditionError("no inputs are classified 0, so there is nothing to explain")
    return source.X[negative], negative


def _frozen(ws: Workspace):
    mask = ws.dataset.schema.mutable_mask
    return None if mask.all() else tuple(~mask)


def cmd_train(cfg: RunConfig, out: Path) -> int:
    if "train" not in cfg.model:
        raise ConfigError("train needs config field 'model.train' (got a model path)")
    ws = _workspace(cfg, require_model=False)
    model, report = _train(cfg, ws.train, ws.test)
    out.mkdir(parents=True, exist_ok=True)
    save_weights(model, out / "weights.json")
    summary = {"layer_dims": list(model.layer_dims), "train_accuracy": report.train_accuracy,
               "test_accuracy": report.test_accuracy, "final_loss": report.loss_history[-1]
               if report.loss_history else None}
    (out / "train_metrics.json").write_text(json.dumps(summary, indent=1))
    print(json.dumps(summary))
    return EXIT_OK


def _result_doc(ws: Workspace, res: GenerationResult, row: int, with_trace: bool) -> dict:
    doc = {
        "instance": int(row), "method": res.method, "converged": res.converged,
        "iterations": res.iterations, "lambda": res.lam,
        "x": res.x.tolist(), "delta": res.delta.tolist(), "x_cf": res.x_cf.tolist(),
        "x_cf_raw": denormalize(ws.dataset, res.x_cf).tolist(),
        "distance": res.distance,
    }
    if res.estimate is not None:
        doc.update(bound=res.estimate.upper_bound, theta_tilde=res.estimate.theta_tilde,
                   gamma_tilde=res.estimate.gamma_tilde, confidence=res.estimate.confidence)
    if res.probe_estimate is not None:
        doc["probe_estimate"] = res.probe_estimate
    if with_trace and res.trace is not None:
        doc["trace"] = {k: v.tolist() for k, v in res.trace.items()}
    return doc


def cmd_generate(cfg: RunConfig, out: Path, args) -> int:
    ws = _workspace(cfg)
    method = args.method or cfg.methods[0]
    sigma2 = args.sigma2 if args.sigma2 is not None else cfg.sigma2[0]
    target = args.target if args.target is not None else cfg.targets[0]
    gen = cfg.generation(method, None if method == "wachter" else sigma2, target, ws.dataset.n_features,
                         _frozen(ws))
    gen = replace(gen, record_trace=args.trace)
    gen.check_reachable(ws.model.threshold)
    rows = [int(r) for r in args.instances.split(",")] if args.instances else None
    X, ids = _select(ws, cfg, rows)
    results = generate(ws.model, X, gen, ids)
    docs = [_result_doc(ws, r, i, args.trace) for r, i in zip(results, ids)]
    out.mkdir(parents=True, exist_ok=True)
    (out / "generate.json").write_text(json.dumps({"method": method, "sigma2": sigma2,
                                                   "target": target, "results": docs}, indent=1))
    print(f"{sum(r.converged for r in results)}/{len(results)} converged; wrote {out / 'generate.json'}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, out: Path, jobs: int) -> int:
    ws = _workspace(cfg)
    X, ids = _select(ws, cfg, None)
    template = cfg.generation("wachter", None, cfg.targets[0] if cfg.targets else 0.35, ws.dataset.n_features)
    records = bench.run_sweep(ws.model, X, cfg.sigma2, cfg.targets, cfg.methods, cfg.seed, template,
                              cfg.K_eval, ids, _frozen(ws), jobs)
    paths = bench.emit_all(records, out)
    paths.append(bench.emit_records(records, out / "records.csv"))
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_bound_table(args, out: Path | None) -> int:
    try:
        rows = bound_table(args.m, args.confidence)
    except ConfigError as exc:
        raise ConfigError(f"bound-table: {exc}") from exc
    target = open(out / "bound_table.csv", "w", newline="") if out else sys.stdout
    try:
        writer = csv.writer(target, lineterminator="\n")
        writer.writerow(["m", "confidence", "K"])
        for r in rows:
            writer.writerow([bench.fmt(r["m"]), bench.fmt(r["confidence"]), r["K"]])
    finally:
        if out:
            target.close()
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, out: Path, args) -> int:
    ws = _workspace(cfg)
    path = Path(args.counterfactuals) if args.counterfactuals else out / "generate.json"
    try:
        doc = json.loads(path.read_text())
        entries = doc["results"]
    except FileNotFoundError:
        raise ConfigError(f"counterfactual file {path} does not exist; run 'generate' first") from None
    except (json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"{path}: not a generate output ({exc})") from exc
    sigma2 = args.sigma2 if args.sigma2 is not None else (doc.get("sigma2") or cfg.sigma2[0])
    spec = NoiseSpec.gaussian(sigma2, ws.dataset.n_features, frozen=_frozen(ws), seed=cfg.seed)
    records = []
    for e in entries:
        x = np.asarray(e["x"], dtype=np.float64)
        res = GenerationResult(e["method"], x, np.asarray(e["delta"], dtype=np.float64), bool(e["converged"]),
                               float(e["lambda"]), int(e["iterations"]), int(e["instance"]))
        rec = bench.evaluate(ws.model, x, res, cfg.K_eval, spec, cfg.m, cfg.K,
                             doc.get("target") if e["method"] != "wachter" else None)
        if "bound" in e:
            rec = replace(rec, bound=float(e["bound"]))
        records.append(rec)
    path = bench.emit_records(records, out / "evaluate.csv")
    print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="croco", description="Robust counterfactual explanations.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (overrides config 'out')")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train a classifier and save its weights")
    gen = sub.add_parser("generate", parents=[common], help="generate counterfactuals")
    gen.add_argument("--method", choices=METHODS)
    gen.add_argument("--sigma2", type=float)
    gen.add_argument("--target", type=float)
    gen.add_argument("--instances", help="comma-separated row indices into the instance source")
    gen.add_argument("--trace", action="store_true", help="store per-iteration loss traces")
    sub.add_parser("sweep", parents=[common], help="run the benchmark grid and write CSV artifacts")
    bt = sub.add_parser("bound-table", parents=[common], help="samples K needed per (m, confidence)")
    bt.add_argument("--m", type=float, nargs="+", default=[0.1, 0.05, 0.01])
    bt.add_argument("--confidence", type=float, nargs="+", default=[0.9, 0.99, 0.999])
    ev = sub.add_parser("evaluate", parents=[common], help="score counterfactuals from 'generate'")
    ev.add_argument("--counterfactuals", help="generate.json to score (default OUT/generate.json)")
    ev.add_argument("--sigma2", type=float)
    return parser


def _setup_logging() -> None:
    level = getattr(logging, os.environ.get("CROCO_LOG", "WARNING").upper(), None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _origin(exc: BaseException) -> str:
    """Module that raised ``exc`` (or the error it wraps), for error messages."""
    while exc.__cause__ is not None:
        exc = exc.__cause__
    tb = exc.__traceback__
    while tb is not None and tb.tb_next is not None:
        tb = tb.tb_next
    return tb.tb_frame.f_globals.get("__name__", "?") if tb is not None else "?"


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        if args.jobs < 1:
            raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
        if args.command == "bound-table":
            out = Path(args.out) if args.out else None
            if out:
                out.mkdir(parents=True, exist_ok=True)
            return cmd_bound_table(args, out)
        if not args.config:
            raise ConfigError(f"'{args.command}' needs --config PATH")
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        out = Path(args.out or cfg.out)
        if args.command == "train":
            return cmd_train(cfg, out)
        if args.command == "generate":
            return cmd_generate(cfg, out, args)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, args.jobs)
        return cmd_evaluate(cfg, out, args)
    except (ConfigError, SchemaError, WeightFileError, DataError, FileNotFoundError) as exc:
        print(f"croco {args.command}: configuration error [{_origin(exc)}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PreconditionError, CrocoError) as exc:
        print(f"croco {args.command}: [{_origin(exc)}] {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - surface anything else as a runtime failure
        logger.debug("unhandled error", exc_info=True)
        print(f"croco {args.command}: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
