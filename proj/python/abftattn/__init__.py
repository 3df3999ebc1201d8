"""Fault-tolerant multi-head attention with extreme-error-correcting ABFT."""

import json

from ._abftattn import (
    ConfigError,
    ShapeError,
    classify_pattern,
    classify_value,
    column_checksums,
    correct_vector,
    flip_bit,
    forward,
    forward_protected,
    gemm,
    random_attention,
    roundoff_threshold,
    row_checksums,
    section_cost,
    softmax_rows,
)
from . import _abftattn

__all__ = [
    "ConfigError",
    "ShapeError",
    "bench",
    "campaign",
    "classify_pattern",
    "classify_value",
    "column_checksums",
    "correct_vector",
    "flip_bit",
    "forward",
    "forward_protected",
    "gemm",
    "optimize",
    "random_attention",
    "roundoff_threshold",
    "row_checksums",
    "section_cost",
    "softmax_rows",
    "study",
]


def _run(fn, config, *args):
    text = config if isinstance(config, str) else json.dumps(config or {})
    return json.loads(fn(text, *args))


def study(config=None):
    """Propagation study; `config` is a dict or JSON text in the run-config format."""
    return _run(_abftattn._study, config)


def campaign(config=None, records=False):
    """Fault-injection campaign on the protected forward pass."""
    return _run(_abftattn._campaign, config, records)


def optimize(config=None):
    """Detection-frequency optimization over the configured error-rate sweep."""
    return _run(_abftattn._optimize, config)


def bench(config=None):
    """Protected vs unprotected timing plus cost-model agreement."""
    return _run(_abftattn._bench, config)
