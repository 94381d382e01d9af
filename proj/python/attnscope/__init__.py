"""Attention-map analysis for BERT-style encoders."""

import json

import numpy as np

from . import _core
from ._core import (
    Error,
    cone_index,
    layer_norm_rows,
    lilliefors_critical,
    numeric_rank,
    read_npy,
    singular_values,
    softmax_rows,
)

__all__ = [
    "Error",
    "classify",
    "cone_index",
    "encode",
    "generate",
    "layer_norm_rows",
    "lilliefors",
    "lilliefors_critical",
    "metrics",
    "numeric_rank",
    "read_npy",
    "row_entropy",
    "singular_values",
    "softmax_rows",
    "verify",
    "write_npy",
]


def write_npy(array, path):
    _core.write_npy(np.ascontiguousarray(array, dtype=np.float32), str(path))


def row_entropy(s):
    per_row, mean, normalized = _core.row_entropy(np.asarray(s, dtype=np.float64))
    return {"per_row": per_row, "mean": mean, "normalized_mean": normalized}


def lilliefors(sample):
    d, critical, reject = _core.lilliefors(list(map(float, sample)))
    return {"statistic": d, "critical": critical, "reject": reject}


def generate(spec):
    """Attention map for a pattern spec, e.g. {"kind": "vertical", "n": 8, "i": 3}."""
    return _core.generate(json.dumps(spec))


def classify(s, **params):
    return json.loads(_core.classify(np.asarray(s, dtype=np.float64), json.dumps(params)))


def encode(config, out, tokens=None):
    _core.encode(json.dumps(config), str(out), tokens)


def metrics(run_dir, selection="all", out=None):
    return json.loads(_core.metrics(str(run_dir), selection, None if out is None else str(out)))


def verify(run_dir):
    return json.loads(_core.verify(str(run_dir)))
