"""Per-scale visual resampler: learnable queries cross-attend to one window.

A fixed set of N queries condenses each windowed feature into N tokens,
independent of the window's spatial size. When several backbone feature
levels are configured, the queries attend to them sequentially from the
lowest level to the highest, one cross-attention block per level, with a
single feed-forward applied after the last level. Queries and weights are
shared across all windows of a scale; position information enters through
the feature map embedding added upstream.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass

import numpy as np

from cos.numerics import (
    ShapeError,
    Tensor,
    concat,
    gelu,
    layer_norm,
    matmul,
    mul,
    softmax_rows,
)
from cos.windowing import WindowedFeatures

# test-only sinks for attention maps produced anywhere in the system;
# not thread-safe, which is fine for the single-threaded property runs
_ATTN_SINKS: list[list[np.ndarray]] = []


@contextlib.contextmanager
def record_attention():
    """Collect every attention map computed inside the context."""
    sink: list[np.ndarray] = []
    _ATTN_SINKS.append(sink)
    try:
        yield sink
    finally:
        _ATTN_SINKS.remove(sink)


@dataclass
class Affine:
    gain: Tensor  # (D,)
    bias: Tensor  # (D,)


@dataclass
class AttnBlock:
    """Projections and norms for one cross-attention over one feature level."""

    q_proj: Tensor  # (D, D)
    k_proj: Tensor  # (D, D)
    v_proj: Tensor  # (D, D)
    o_proj: Tensor  # (D, D)
    ln_q: Affine
    ln_kv: Affine


@dataclass
class Mlp:
    ln: Affine
    w_in: Tensor  # (D, 4D)
    w_out: Tensor  # (4D, D)


@dataclass
class ResamplerParams:
    queries: Tensor  # (N, D), shared across all windows of the scale
    feat_proj: Tensor  # (C, D)
    blocks: list[AttnBlock]  # one per feature level, low -> high
    mlp: Mlp
    heads: int

    @property
    def n_queries(self) -> int:
        return self.queries.shape[0]

    @property
    def dim(self) -> int:
        return self.queries.shape[1]


@dataclass
class LevelStack:
    """Feature maps from successive backbone depths, ordered low to high."""

    levels: list[Tensor]

    def __post_init__(self):
        if not self.levels:
            raise ShapeError("LevelStack needs at least one feature map")
        shape = self.levels[0].shape
        for lvl in self.levels:
            if lvl.shape != shape:
                raise ShapeError(f"inhomogeneous level shapes: {lvl.shape} vs {shape}")

    def __len__(self) -> int:
        return len(self.levels)


def init_resampler(
    n_queries: int, channels: int, dim: int, heads: int, levels: int, rng: np.random.Generator
) -> ResamplerParams:
    if dim % heads != 0:
        raise ShapeError(f"model dim {dim} is not divisible by {heads} heads")

    def lin(n_in, n_out):
        return Tensor(rng.normal(0.0, 1.0 / math.sqrt(n_in), (n_in, n_out)), requires_grad=True)

    def affine(n):
        return Affine(
            gain=Tensor(np.ones(n), requires_grad=True),
            bias=Tensor(np.zeros(n), requires_grad=True),
        )

    blocks = [
        AttnBlock(
            q_proj=lin(dim, dim),
            k_proj=lin(dim, dim),
            v_proj=lin(dim, dim),
            o_proj=lin(dim, dim),
            ln_q=affine(dim),
            ln_kv=affine(dim),
        )
        for _ in range(levels)
    ]
    mlp = Mlp(ln=affine(dim), w_in=lin(dim, 4 * dim), w_out=lin(4 * dim, dim))
    return ResamplerParams(
        queries=Tensor(rng.normal(0.0, 1.0, (n_queries, dim)), requires_grad=True),
        feat_proj=lin(channels, dim),
        blocks=blocks,
        mlp=mlp,
        heads=heads,
    )


def cross_attend(queries: Tensor, keys_values: Tensor, block: AttnBlock, heads: int) -> Tensor:
    """Multi-head cross-attention on already-normalized inputs.

    ``queries`` is (N, D), ``keys_values`` is (M, D); logits are scaled by
    1/sqrt(D/heads). Returns the (N, D) output projection.
    """
    dim = queries.shape[1]
    if dim % heads != 0:
        raise ShapeError(f"dim {dim} not divisible by {heads} heads")
    head_dim = dim // heads
    scale = 1.0 / math.sqrt(head_dim)

    q = matmul(queries, block.q_proj)
    k = matmul(keys_values, block.k_proj)
    v = matmul(keys_values, block.v_proj)

    outs = []
    for h in range(heads):
        cols = slice(h * head_dim, (h + 1) * head_dim)
        attn = softmax_rows(mul(matmul(q[:, cols], k[:, cols].T), scale))
        for sink in _ATTN_SINKS:
            sink.append(attn.data)
        outs.append(matmul(attn, v[:, cols]))
    merged = outs[0] if heads == 1 else concat(outs, axis=1)
    return matmul(merged, block.o_proj)


def _feed_forward(mlp: Mlp, x: Tensor) -> Tensor:
    hidden = gelu(matmul(layer_norm(x, mlp.ln.gain, mlp.ln.bias), mlp.w_in))
    return matmul(hidden, mlp.w_out)


def resample_window(p: ResamplerParams, win_levels: list[Tensor]) -> Tensor:
    """Condense one window (given per feature level) into N tokens.

    Output depends only on this window's features and the parameters.
    """
    if len(win_levels) != len(p.blocks):
        raise ShapeError(
            f"got {len(win_levels)} feature levels but resampler has {len(p.blocks)} blocks"
        )
    channels = p.feat_proj.shape[0]
    tokens = p.queries
    for block, win in zip(p.blocks, win_levels):
        if win.ndim != 2 or win.shape[1] != channels:
            raise ShapeError(f"window features must be (W*W, {channels}), got {win.shape}")
        kv = layer_norm(matmul(win, p.feat_proj), block.ln_kv.gain, block.ln_kv.bias)
        q_in = layer_norm(tokens, block.ln_q.gain, block.ln_q.bias)
        tokens = tokens + cross_attend(q_in, kv, block, p.heads)
    return tokens + _feed_forward(p.mlp, tokens)


def resample_scale(
    p: ResamplerParams, wf_levels: list[WindowedFeatures]
) -> tuple[Tensor, np.ndarray]:
    """Run the resampler over every window of a scale, row-major grid order.

    Returns the ((L/W)^2 * N, D) token tensor and an integer provenance array
    of (window index, query index) rows.
    """
    first = wf_levels[0]
    for wf in wf_levels[1:]:
        if wf.window_grid != first.window_grid or wf.window_size != first.window_size:
            raise ShapeError(
                f"inconsistent grids across levels: {wf.window_grid}/{wf.window_size} "
                f"vs {first.window_grid}/{first.window_size}"
            )
    n = p.n_queries
    chunks = []
    provenance = np.empty((len(first.windows) * n, 2), dtype=np.int64)
    for j in range(len(first.windows)):
        chunks.append(resample_window(p, [wf.windows[j] for wf in wf_levels]))
        provenance[j * n : (j + 1) * n, 0] = j
        provenance[j * n : (j + 1) * n, 1] = np.arange(n)
    tokens = chunks[0] if len(chunks) == 1 else concat(chunks, axis=0)
    return tokens, provenance
