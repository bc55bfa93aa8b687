"""Slow-fast analysis of the reduced Purkinje cell model."""

import os as _os

_models = _os.path.join(_os.path.dirname(__file__), "models")
if _os.path.isdir(_models):
    _os.environ.setdefault("CANARD_MODEL_DIR", _models)

from ._canard import (
    CanardError,
    ConfigError,
    Expr,
    IncompleteResult,
    Model,
    NumericalError,
    bundled_model_path,
    classify,
    fast_bifurcation,
    load_model,
    locate_torus,
    parse_expr,
    poincare,
    run_command,
    simulate,
    torus_criticality,
)

J_STAR = -32.93825

__all__ = [
    "CanardError",
    "ConfigError",
    "Expr",
    "IncompleteResult",
    "J_STAR",
    "Model",
    "NumericalError",
    "bundled_model_path",
    "classify",
    "fast_bifurcation",
    "load_model",
    "locate_torus",
    "parse_expr",
    "poincare",
    "run_command",
    "simulate",
    "torus_criticality",
]
