"""Generative processes, priors and dataset files."""

from .dataset import (
    Dataset,
    DatasetFormatError,
    augmenter_for,
    generate_dataset,
    model_from_manifest,
    read_dataset,
    record_seeds,
    simulate,
    write_dataset,
)
from .lorenz import (
    DivergenceError,
    Lorenz96Model,
    LorenzViews,
    UnsupportedOperation,
    augment,
    integrate,
    lorenz_generate,
    lorenz_generate_batch,
    lorenz_rhs,
)
from .priors import ConfigurationError, PriorSpec, sample_prior
from .synthetic import (
    PAPER_MATRIX,
    InvertibleMLP,
    SyntheticModel,
    synthetic_generate,
    synthetic_generate_batch,
    synthetic_log_ratio,
    synthetic_true_posterior,
)
from .vmf import sample_vmf_circle, von_mises_angles

__all__ = [
    "ConfigurationError",
    "Dataset",
    "DatasetFormatError",
    "DivergenceError",
    "InvertibleMLP",
    "Lorenz96Model",
    "LorenzViews",
    "PAPER_MATRIX",
    "PriorSpec",
    "SyntheticModel",
    "UnsupportedOperation",
    "augment",
    "augmenter_for",
    "generate_dataset",
    "integrate",
    "lorenz_generate",
    "lorenz_generate_batch",
    "lorenz_rhs",
    "model_from_manifest",
    "read_dataset",
    "record_seeds",
    "sample_prior",
    "sample_vmf_circle",
    "simulate",
    "synthetic_generate",
    "synthetic_generate_batch",
    "synthetic_log_ratio",
    "synthetic_true_posterior",
    "von_mises_angles",
    "write_dataset",
]
