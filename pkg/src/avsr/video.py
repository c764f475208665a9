"""Spatio-temporal visual front-end: 3D stem, 2D residual stages, spatial pool.

Layer schedule: a 5x7x7 convolution with spatial stride 2, a spatially
strided 3D max-pool, then four residual stages of 3x3 convolutions with
spatial strides 1/2/2/2 applied per frame. Total spatial down-sampling is
32; temporal resolution is preserved (one output row per input frame).
Striding uses same-padding with ceil division throughout (SAME_PAD_CEIL),
so a 112-pixel input yields a 4x4 map before pooling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, GeometryError
from .nn import Params, he_normal, same_pad_amount, window_indices
from .tensor import Graph, Node

SAME_PAD_CEIL = "same-ceil"  # single recorded padding policy
TOTAL_DOWNSAMPLE = 32
MIN_SPATIAL = 32  # anything smaller cannot survive the five halvings
POOL_PAD_VALUE = -1e30  # finite stand-in for -inf in max-pool padding


@dataclass
class VideoClip:
    """frames: [T x H x W x C] reals in [0, 1] at a nominal frame rate."""

    frames: np.ndarray
    frame_rate: float = 25.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim == 3:
            self.frames = self.frames[..., None]
        if self.frames.ndim != 4:
            raise DataError(f"video clip must be [T,H,W,C], got shape {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise DataError("video clip needs at least one frame")


@dataclass
class FrontendConfig:
    in_channels: int = 1
    stem_channels: int = 64
    stage_channels: tuple[int, ...] = (64, 128, 256, 512)
    blocks_per_stage: int = 2
    temporal_width: int = 5

    @property
    def feature_dim(self) -> int:
        return self.stage_channels[-1]

    @staticmethod
    def toy(channels: int = 32) -> "FrontendConfig":
        half = max(channels // 2, 4)
        return FrontendConfig(
            stem_channels=half,
            stage_channels=(half, half, channels, channels),
            blocks_per_stage=1,
        )


def _conv(graph: Graph, x: Node, w: Node, b: Node, kernel, strides, pad_value=0.0) -> Node:
    """x [T,H,W,C] -> [To,Ho,Wo,Cout] via window gather + matmul."""
    t, h, wd, c = x.shape
    kt, kh, kw = kernel
    st, sh, sw = strides
    pads = [
        same_pad_amount(t, kt, st),
        same_pad_amount(h, kh, sh),
        same_pad_amount(wd, kw, sw),
        (0, 0),
    ]
    if any(p != (0, 0) for p in pads):
        x = graph.op("pad", x, widths=pads, value=pad_value)
    idx, (to, ho, wo) = window_indices(x.shape, kernel, strides)
    cols = graph.op("take_flat", x, idx=idx)
    out = graph.op("matmul", cols, w)
    out = graph.op("add", out, b)
    return graph.op("reshape", out, shape=(to, ho, wo, w.shape[1]))


def _max_pool(graph: Graph, x: Node, kernel=(1, 3, 3), strides=(1, 2, 2)) -> Node:
    t, h, wd, c = x.shape
    kt, kh, kw = kernel
    st, sh, sw = strides
    pads = [
        same_pad_amount(t, kt, st),
        same_pad_amount(h, kh, sh),
        same_pad_amount(wd, kw, sw),
        (0, 0),
    ]
    if any(p != (0, 0) for p in pads):
        x = graph.op("pad", x, widths=pads, value=POOL_PAD_VALUE)
    # gather per-channel windows: treat channels as the window's last axis of size 1
    tp, hp, wp, _ = x.shape
    idx, (to, ho, wo) = window_indices((tp, hp, wp, c), (kt, kh, kw), (st, sh, sw))
    # idx rows interleave channels; regroup so max runs over the kt*kh*kw window per channel
    cols = graph.op("take_flat", x, idx=idx)
    cols = graph.op("reshape", cols, shape=(to * ho * wo, kt * kh * kw, c))
    swapped = graph.op("reshape", graph.op("take_flat", cols, idx=_swap_axes_idx(to * ho * wo, kt * kh * kw, c)), shape=(to * ho * wo, c, kt * kh * kw))
    pooled = graph.op("max_last", swapped)
    return graph.op("reshape", pooled, shape=(to, ho, wo, c))


def _swap_axes_idx(n, k, c) -> np.ndarray:
    """Flat indices that turn [n,k,c] into [n,c,k]."""
    base = np.arange(n)[:, None, None] * (k * c)
    kk = np.arange(k)[None, None, :] * c
    cc = np.arange(c)[None, :, None]
    return (base + kk + cc).reshape(-1)


class VisualFrontend:
    """Trainable front-end mapping a clip to one feature row per frame."""

    def __init__(self, cfg: FrontendConfig, rng: np.random.Generator, prefix: str = "frontend"):
        self.cfg = cfg
        self.prefix = prefix
        self.params = Params()
        kt = cfg.temporal_width
        fan = kt * 7 * 7 * cfg.in_channels
        self.params.add(f"{prefix}.stem.w", he_normal(rng, fan, (fan, cfg.stem_channels)))
        self.params.add(f"{prefix}.stem.b", np.zeros(cfg.stem_channels))
        c_in = cfg.stem_channels
        for s, c_out in enumerate(cfg.stage_channels):
            for b in range(cfg.blocks_per_stage):
                stride = 2 if (s > 0 and b == 0) else 1
                name = f"{prefix}.s{s}.b{b}"
                fan1 = 3 * 3 * c_in
                self.params.add(f"{name}.c1.w", he_normal(rng, fan1, (fan1, c_out)))
                self.params.add(f"{name}.c1.b", np.zeros(c_out))
                fan2 = 3 * 3 * c_out
                self.params.add(f"{name}.c2.w", he_normal(rng, fan2, (fan2, c_out)))
                self.params.add(f"{name}.c2.b", np.zeros(c_out))
                if stride != 1 or c_in != c_out:
                    self.params.add(f"{name}.proj.w", he_normal(rng, c_in, (c_in, c_out)))
                    self.params.add(f"{name}.proj.b", np.zeros(c_out))
                c_in = c_out

    def build(self, graph: Graph, clip: VideoClip, nodes: dict[str, Node] | None = None) -> Node:
        """Returns a [T x feature_dim] node; `nodes` lets callers share bindings."""
        t, h, w, c = clip.frames.shape
        if c != self.cfg.in_channels:
            raise DataError(f"clip has {c} channels, front-end expects {self.cfg.in_channels}")
        if min(h, w) < MIN_SPATIAL:
            raise GeometryError(f"spatial size {h}x{w} cannot survive {TOTAL_DOWNSAMPLE}x down-sampling")
        p = nodes if nodes is not None else self.params.bind(graph)
        pre = self.prefix
        x = graph.constant(clip.frames)
        kt = self.cfg.temporal_width
        x = _conv(graph, x, p[f"{pre}.stem.w"], p[f"{pre}.stem.b"], (kt, 7, 7), (1, 2, 2))
        x = graph.op("relu", x)
        x = _max_pool(graph, x)
        c_in = self.cfg.stem_channels
        for s, c_out in enumerate(self.cfg.stage_channels):
            for b in range(self.cfg.blocks_per_stage):
                stride = 2 if (s > 0 and b == 0) else 1
                name = f"{pre}.s{s}.b{b}"
                y = _conv(graph, x, p[f"{name}.c1.w"], p[f"{name}.c1.b"], (1, 3, 3), (1, stride, stride))
                y = graph.op("relu", y)
                y = _conv(graph, y, p[f"{name}.c2.w"], p[f"{name}.c2.b"], (1, 3, 3), (1, 1, 1))
                if f"{name}.proj.w" in p:
                    sc = _conv(graph, x, p[f"{name}.proj.w"], p[f"{name}.proj.b"], (1, 1, 1), (1, stride, stride))
                else:
                    sc = x
                x = graph.op("relu", graph.op("add", y, sc))
                c_in = c_out
        # spatial mean-pool: [T,Ho,Wo,C] -> [T,C]
        to, ho, wo, cf = x.shape
        x = graph.op("reshape", x, shape=(to, ho * wo, cf))
        return graph.op("mean_axis", x, axis=1)

    def extract(self, clip: VideoClip) -> np.ndarray:
        """Inference-only feature extraction."""
        graph = Graph()
        return self.build(graph, clip).value


def spatial_map_size(h: int, w: int) -> tuple[int, int]:
    """Pre-pool map dimensions under the ceil-division padding policy."""
    for _ in range(5):
        h = -(-h // 2)
        w = -(-w // 2)
    return h, w
