"""Robust counterfactual explanations for neural-network classifiers under input noise."""
from .bench import (SweepRecord, emit_bound_check, emit_target_comparison, emit_tradeoff,
                    emit_validity_heatmap, evaluate, run_sweep, synthetic_benchmark)
from .data import Dataset, Feature, FeatureSchema, load_csv, normalize, split, synth_two_gaussians
from .errors import (ConfigError, CrocoError, DataError, PreconditionError, SchemaError, ShapeError,
                     WeightFileError)
from .generators import (GenerationConfig, GenerationResult, croco_generate, croco_loss, generate,
                         probe_first_order_estimate, probe_generate, wachter_generate)
from .nnmodel import MlpClassifier, load_weights, save_weights, train
from .noise import NoiseSpec, sample
from .robustness import (RobustnessEstimate, bound_table, brute_force_invalidation, confidence, estimate,
                         invalidation_rate_mc, min_samples, soft_invalidation_mc, upper_bound)

__all__ = [
    "SweepRecord", "emit_bound_check", "emit_target_comparison", "emit_tradeoff", "emit_validity_heatmap",
    "evaluate", "run_sweep", "synthetic_benchmark",
    "Dataset", "Feature", "FeatureSchema", "load_csv", "normalize", "split", "synth_two_gaussians",
    "ConfigError", "CrocoError", "DataError", "PreconditionError", "SchemaError", "ShapeError", "WeightFileError",
    "GenerationConfig", "GenerationResult", "croco_generate", "croco_loss", "generate",
    "probe_first_order_estimate", "probe_generate", "wachter_generate",
    "MlpClassifier", "load_weights", "save_weights", "train",
    "NoiseSpec", "sample",
    "RobustnessEstimate", "bound_table", "brute_force_invalidation", "confidence", "estimate",
    "invalidation_rate_mc", "min_samples", "soft_invalidation_mc", "upper_bound",
]

__version__ = "0.1.0"
