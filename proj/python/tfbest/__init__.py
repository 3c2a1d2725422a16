"""Remaining-useful-life prediction for hard drives from S.M.A.R.T. logs.

Thin Python layer over the native core: model construction, prediction,
checkpoints, the data pipeline, training, evaluation and the CLI.
"""

from ._tfbest import (
    ConfigMismatchError,
    DataError,
    Error,
    Model,
    ModelConfig,
    NumericError,
    ShapeError,
    closed_form_parameter_count,
    confidence_margin,
    evaluate,
    fit,
    gradcheck,
    load_split,
    prepare,
    run_cli,
    sinusoidal_pe,
    student_t_cdf,
    student_t_quantile,
    synth_csv,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigMismatchError",
    "DataError",
    "Error",
    "Model",
    "ModelConfig",
    "NumericError",
    "ShapeError",
    "closed_form_parameter_count",
    "confidence_margin",
    "evaluate",
    "fit",
    "gradcheck",
    "load_split",
    "prepare",
    "run_cli",
    "sinusoidal_pe",
    "student_t_cdf",
    "student_t_quantile",
    "synth_csv",
]


def make_config(**overrides):
    """ModelConfig with keyword overrides, e.g. make_config(features=8, variant="dast")."""
    cfg = ModelConfig()
    for key, value in overrides.items():
        if not hasattr(cfg, key):
            raise AttributeError(f"ModelConfig has no field {key!r}")
        setattr(cfg, key, value)
    cfg.validate()
    return cfg
