"""CTC negative log-likelihood via the log-space forward-backward recursion.

The target is expanded with interleaved blanks (length 2L+1, blank at both
ends); the loss is -log of the total probability over all monotonic paths
that collapse to the target. All recursions use log-sum-exp, and the analytic
gradient with respect to the per-frame log-posteriors is the negative path
occupancy. Infeasible targets (fewer frames than symbols-plus-required
separating blanks) raise instead of returning an infinite loss.
"""

from __future__ import annotations

import numpy as np

from .errors import InfeasibleAlignmentError, ShapeError
from .tensor import register_op

NEG_INF = -np.inf


def expand_with_blanks(target, blank: int) -> np.ndarray:
    """abc -> [blank, a, blank, b, blank, c, blank]."""
    out = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    out[1::2] = target
    return out


def min_frames(target) -> int:
    """Shortest frame count admitting a valid alignment."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_forward_backward(log_posteriors: np.ndarray, target, blank: int | None = None) -> tuple[float, np.ndarray]:
    """Loss and gradient w.r.t. the log-posteriors.

    log_posteriors: [T x K] rows normalized in log domain; blank defaults to
    the last column. Returns (nll, grad) where grad[t,k] = dL/d logp[t,k];
    the gradient w.r.t. pre-softmax logits is softmax(logits) + grad.
    """
    lp = np.asarray(log_posteriors, dtype=np.float64)
    if lp.ndim != 2:
        raise ShapeError(f"ctc: posteriors must be [T x K], got {lp.shape}")
    t_len, k = lp.shape
    if blank is None:
        blank = k - 1
    target = np.asarray(list(target), dtype=np.int64)
    if target.size and (target.min() < 0 or target.max() >= k or (target == blank).any()):
        raise ShapeError("ctc: target contains blank or out-of-range symbols")
    if t_len < len(target):
        raise InfeasibleAlignmentError(f"{t_len} frames cannot emit {len(target)} symbols")
    need = min_frames(target)
    if t_len < need:
        raise InfeasibleAlignmentError(
            f"{t_len} frames cannot emit this target: repeated symbols need separating blanks ({need} frames required)"
        )

    lab = expand_with_blanks(target, blank)
    s_len = len(lab)
    emit = lp[:, lab]  # [T x S]
    # states that may be entered by a skip from s-2: non-blank and different symbol
    skip_ok = np.zeros(s_len, dtype=bool)
    if s_len > 2:
        skip_ok[2:] = (lab[2:] != blank) & (lab[2:] != lab[:-2])

    alpha = np.full((t_len, s_len), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if s_len > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        stay = prev
        step = np.concatenate(([NEG_INF], prev[:-1]))
        skip = np.concatenate(([NEG_INF, NEG_INF], prev[:-2]))
        skip = np.where(skip_ok, skip, NEG_INF)
        alpha[t] = emit[t] + np.logaddexp(np.logaddexp(stay, step), skip)

    beta = np.full((t_len, s_len), NEG_INF)
    beta[t_len - 1, s_len - 1] = 0.0
    if s_len > 1:
        beta[t_len - 1, s_len - 2] = 0.0
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        stay = nxt
        step = np.concatenate((nxt[1:], [NEG_INF]))
        skip = np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))
        skip = np.where(np.concatenate((skip_ok[2:], [False, False])), skip, NEG_INF)
        beta[t] = np.logaddexp(np.logaddexp(stay, step), skip)

    log_z = np.logaddexp(alpha[t_len - 1, s_len - 1], alpha[t_len - 1, s_len - 2] if s_len > 1 else NEG_INF)
    if not np.isfinite(log_z):
        raise InfeasibleAlignmentError("no alignment path has non-zero probability")

    occ = alpha + beta  # includes emit[t] exactly once per state
    grad = np.full((t_len, k), NEG_INF)
    for s in range(s_len):
        col = lab[s]
        grad[:, col] = np.logaddexp(grad[:, col], occ[:, s])
    grad = -np.exp(grad - log_z)
    return float(-log_z), grad


# -- graph primitive ---------------------------------------------------------


def _fwd_ctc(vals, attrs, cache):
    loss, grad = ctc_forward_backward(vals[0], attrs["target"], attrs.get("blank"))
    return np.array([loss]), grad


def _bwd_ctc(g, vals, attrs, cache, out):
    return [g[0] * cache]


register_op("ctc", _fwd_ctc, _bwd_ctc)
