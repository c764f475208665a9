"""Training criteria: label-smoothed cross-entropy and the CTC node builder."""

from __future__ import annotations

import numpy as np

from . import ctc as _ctc  # registers the "ctc" graph op
from .errors import ConfigError, ShapeError
from .tensor import Graph, Node

ctc_forward_backward = _ctc.ctc_forward_backward


def smoothed_cross_entropy(log_probs: np.ndarray, targets, smoothing: float, pad_id: int | None = None) -> float:
    """(1-s) * NLL(target) + s * mean NLL over the vocabulary.

    Pad positions are excluded from the average. With s=0 this is plain
    cross-entropy; with uniform predictions it equals log V for any s.
    """
    if not (0 <= smoothing < 1):
        raise ConfigError(f"smoothing must be in [0,1), got {smoothing}")
    lp = np.asarray(log_probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if lp.ndim != 2 or targets.ndim != 1 or len(targets) != lp.shape[0]:
        raise ShapeError(f"smoothed_cross_entropy: got log-probs {lp.shape} and targets {targets.shape}")
    keep = np.ones(len(targets), dtype=bool) if pad_id is None else targets != pad_id
    if not keep.any():
        raise ShapeError("smoothed_cross_entropy: every position is padding")
    picked = lp[np.arange(len(targets)), targets]
    per_pos = -(1.0 - smoothing) * picked - smoothing * lp.mean(axis=1)
    return float(per_pos[keep].mean())


def build_smoothed_cross_entropy(
    graph: Graph,
    log_probs: Node,
    targets,
    smoothing: float,
    pad_id: int | None = None,
) -> Node:
    """Graph form of smoothed_cross_entropy (scalar node, shape (1,))."""
    if not (0 <= smoothing < 1):
        raise ConfigError(f"smoothing must be in [0,1), got {smoothing}")
    targets = np.asarray(targets, dtype=np.int64)
    t, v = log_probs.shape
    keep = np.ones(t) if pad_id is None else (targets != pad_id).astype(np.float64)
    n_valid = keep.sum()
    if n_valid == 0:
        raise ShapeError("smoothed_cross_entropy: every position is padding")
    picked = graph.op("take_flat", log_probs, idx=np.arange(t) * v + targets)
    per_pos = graph.op("scale", picked, factor=-(1.0 - smoothing))
    if smoothing > 0:
        row_mean = graph.op("mean_axis", log_probs, axis=1)
        per_pos = graph.op("add", per_pos, graph.op("scale", row_mean, factor=-smoothing))
    masked = graph.op("mul", per_pos, graph.constant(keep))
    return graph.op("scale", graph.op("sum_all", masked), factor=1.0 / n_valid)


def build_ctc_loss(graph: Graph, log_posteriors: Node, target, blank: int) -> Node:
    """Scalar CTC negative log-likelihood node over [T x (V+1)] log-posteriors."""
    return graph.op("ctc", log_posteriors, target=tuple(int(c) for c in target), blank=blank)
