"""Shared layer plumbing: parameter stores, initializers, window gathering.

Models own plain float64 arrays keyed by dotted names; every forward pass
binds them into a fresh Graph so the tape stays per-utterance and parameters can
be updated functionally between passes.
"""

from __future__ import annotations

import numpy as np

from .tensor import Graph, Node


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def he_normal(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Params:
    """Named float64 arrays plus per-graph binding."""

    def __init__(self):
        self.arrays: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.arrays:
            raise ValueError(f"duplicate parameter {name!r}")
        self.arrays[name] = np.asarray(value, dtype=np.float64)

    def bind(self, graph: Graph) -> dict[str, Node]:
        return {name: graph.parameter(name, arr) for name, arr in self.arrays.items()}

    def update(self, new_arrays: dict[str, np.ndarray]) -> None:
        for name, arr in new_arrays.items():
            self.arrays[name] = arr

    def copy(self) -> "Params":
        out = Params()
        for name, arr in self.arrays.items():
            out.arrays[name] = arr.copy()
        return out


def linear(graph: Graph, x: Node, w: Node, b: Node | None = None) -> Node:
    out = graph.op("matmul", x, w)
    if b is not None:
        out = graph.op("add", out, b)
    return out


def same_pad_amount(size: int, kernel: int, stride: int) -> tuple[int, int]:
    """Left/right padding so output = ceil(size/stride) (ceil-division policy)."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    lo = total // 2
    return lo, total - lo


def window_indices(padded_shape, kernel, strides) -> tuple[np.ndarray, tuple[int, int, int]]:
    """Flat gather indices for (T,H,W,C) sliding windows.

    Returns (idx [n_windows x window_size], (To, Ho, Wo)). Window elements
    are ordered (dt, dh, dw, c) row-major to match kernel matrix layout.
    """
    tp, hp, wp, c = padded_shape
    kt, kh, kw = kernel
    st, sh, sw = strides
    to = (tp - kt) // st + 1
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1

    dt, dh, dw, dc = np.meshgrid(np.arange(kt), np.arange(kh), np.arange(kw), np.arange(c), indexing="ij")
    offsets = (((dt * hp) + dh) * wp + dw) * c + dc
    offsets = offsets.reshape(-1)

    t0, h0, w0 = np.meshgrid(np.arange(to) * st, np.arange(ho) * sh, np.arange(wo) * sw, indexing="ij")
    starts = (((t0 * hp) + h0) * wp + w0) * c
    starts = starts.reshape(-1)

    return starts[:, None] + offsets[None, :], (to, ho, wo)
