"""All-reduce-compatible row Top-K compression with EF21M error feedback."""
from .compressor import (
    METHODS,
    CompressorConfig,
    RowCompressor,
    arc_topk_round,
    mask_rows,
    row_importance,
    run_round,
    sketch_local,
)
from .core import GENERATOR_VERSION, derive_seed, gaussian_matrix, reshape_vector, row_norms_sq
from .optimizer import Ef21mConfig, TrainRecord, run_training
from .workload import make_logistic, make_row_structured_quadratic

__version__ = "0.1.0"

__all__ = [
    "METHODS",
    "CompressorConfig",
    "RowCompressor",
    "arc_topk_round",
    "mask_rows",
    "row_importance",
    "run_round",
    "sketch_local",
    "GENERATOR_VERSION",
    "derive_seed",
    "gaussian_matrix",
    "reshape_vector",
    "row_norms_sq",
    "Ef21mConfig",
    "TrainRecord",
    "run_training",
    "make_logistic",
    "make_row_structured_quadratic",
]
