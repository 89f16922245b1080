"""Numerical invariants of strongly pseudoconvex complex Finsler metrics."""

from .metric_dsl import (
    EvaluationError,
    FinslerError,
    MetricProgram,
    MetricSource,
    MetricSyntaxError,
    load_metric,
    parse_metric,
)

__all__ = [
    "EvaluationError",
    "FinslerError",
    "MetricProgram",
    "MetricSource",
    "MetricSyntaxError",
    "load_metric",
    "parse_metric",
]

__version__ = "0.1.0"
