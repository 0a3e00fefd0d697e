"""Post-pretrain token scaling: plan target scales, migrate parameters.

Scaling raises the token budget after pre-training by increasing resolution,
shrinking windows, or both. Each target scale is matched to the pre-trained
scale that serves the same query family (equal queries per window) and the
closest relative spatial extent (window size over feature grid). A matched
scale with identical extent inherits its parameters; any other target scale
is initialized by inflating, i.e. copying, the matched scale's weights.
Query banks whose per-window count changes are laid out on a square grid and
filled from the nearest pre-trained query; the positional embedding is
resized the same way on the feature grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from cos.assembly import BridgeParams, CosConfig, check_config, token_count
from cos.numerics import ShapeError, Tensor
from cos.resampler import Affine, AttnBlock, Mlp, ResamplerParams, resample_window


class UnmappableScaleError(ValueError):
    pass


@dataclass(frozen=True)
class ScaleMapEntry:
    source_index: int
    inherit: bool  # True: same family and extent; False: inflated copy


@dataclass(frozen=True)
class ScalePlan:
    source_cfg: CosConfig
    target_cfg: CosConfig
    scale_map: tuple[ScaleMapEntry, ...]
    token_ratio: float


def _extent(cfg: CosConfig, scale_index: int) -> Fraction:
    """Window footprint as an exact fraction of the feature grid."""
    return Fraction(cfg.scales[scale_index].window_size, cfg.feature_size)


def plan_scale(src: CosConfig, tgt: CosConfig) -> ScalePlan:
    """Match every target scale to a source scale of the same query family."""
    check_config(src)
    check_config(tgt)
    for name in ("channels", "model_dim", "heads", "levels", "out_dim"):
        a, b = getattr(src, name), getattr(tgt, name)
        if a != b:
            raise UnmappableScaleError(f"{name} differs between configs: {a} vs {b}")

    entries = []
    for ti, t in enumerate(tgt.scales):
        family = [
            si for si, s in enumerate(src.scales)
            if s.queries_per_window == t.queries_per_window
        ]
        if not family:
            raise UnmappableScaleError(
                f"target scale {ti} wants {t.queries_per_window} queries per window "
                f"but no source scale has that count"
            )
        t_ext = _extent(tgt, ti)
        best = min(family, key=lambda si: abs(_extent(src, si) - t_ext))
        entries.append(ScaleMapEntry(best, inherit=_extent(src, best) == t_ext))

    n_src, n_tgt = token_count(src), token_count(tgt)
    ratio = n_tgt / n_src
    if ratio < 1:
        raise UnmappableScaleError(
            f"scaling must not shrink the sequence: {n_src} -> {n_tgt} tokens"
        )
    return ScalePlan(src, tgt, tuple(entries), ratio)


def _nearest_grid_index(n_tgt: int, n_src: int) -> np.ndarray:
    """Row of source indices: nearest cell centers of a g_src grid for a g_tgt grid."""
    g_tgt, g_src = _square_side(n_tgt), _square_side(n_src)
    t_centers = (np.arange(g_tgt) + 0.5) / g_tgt
    s_centers = (np.arange(g_src) + 0.5) / g_src
    axis = np.abs(t_centers[:, None] - s_centers[None, :]).argmin(axis=1)
    rows, cols = np.meshgrid(axis, axis, indexing="ij")
    return (rows * g_src + cols).reshape(-1)


def _square_side(n: int) -> int:
    side = int(np.sqrt(n) + 0.5)
    if side * side != n:
        raise UnmappableScaleError(
            f"query count {n} is not a perfect square; grid init needs one"
        )
    return side


def resize_queries(src: Tensor, n_tgt: int) -> Tensor:
    """Fill a new per-window query bank from its nearest pre-trained queries."""
    n_src = src.shape[0]
    if n_tgt == n_src:
        return Tensor(src.data.copy(), requires_grad=True)
    idx = _nearest_grid_index(n_tgt, n_src)
    return Tensor(src.data[idx].copy(), requires_grad=True)


def resize_pos_embed(src: Tensor, grid_tgt: int) -> Tensor:
    """Nearest-neighbor resize of the (L, L, C) positional embedding."""
    grid_src = src.shape[0]
    if grid_tgt == grid_src:
        return Tensor(src.data.copy(), requires_grad=True)
    t_centers = (np.arange(grid_tgt) + 0.5) / grid_tgt
    s_centers = (np.arange(grid_src) + 0.5) / grid_src
    axis = np.abs(t_centers[:, None] - s_centers[None, :]).argmin(axis=1)
    return Tensor(src.data[np.ix_(axis, axis)].copy(), requires_grad=True)


def _clone(t: Tensor) -> Tensor:
    return Tensor(t.data.copy(), requires_grad=True)


def _clone_resampler(r: ResamplerParams, n_queries: int) -> ResamplerParams:
    return ResamplerParams(
        queries=resize_queries(r.queries, n_queries),
        feat_proj=_clone(r.feat_proj),
        blocks=[
            AttnBlock(
                q_proj=_clone(b.q_proj),
                k_proj=_clone(b.k_proj),
                v_proj=_clone(b.v_proj),
                o_proj=_clone(b.o_proj),
                ln_q=Affine(_clone(b.ln_q.gain), _clone(b.ln_q.bias)),
                ln_kv=Affine(_clone(b.ln_kv.gain), _clone(b.ln_kv.bias)),
            )
            for b in r.blocks
        ],
        mlp=Mlp(
            ln=Affine(_clone(r.mlp.ln.gain), _clone(r.mlp.ln.bias)),
            w_in=_clone(r.mlp.w_in),
            w_out=_clone(r.mlp.w_out),
        ),
        heads=r.heads,
    )


def migrate_params(src_params: BridgeParams, plan: ScalePlan) -> BridgeParams:
    """Build target parameters from source parameters following the plan."""
    src_cfg, tgt_cfg = plan.source_cfg, plan.target_cfg
    if len(src_params.resamplers) != len(src_cfg.scales):
        raise ShapeError(
            f"source params carry {len(src_params.resamplers)} resamplers, "
            f"plan expects {len(src_cfg.scales)}"
        )
    grid_src = src_cfg.feature_size
    want = (grid_src, grid_src, src_cfg.channels)
    if src_params.pos_embed.shape != want:
        raise ShapeError(f"source pos_embed must be {want}, got {src_params.pos_embed.shape}")

    resamplers = []
    for entry, spec in zip(plan.scale_map, tgt_cfg.scales):
        source = src_params.resamplers[entry.source_index]
        resamplers.append(_clone_resampler(source, spec.queries_per_window))
    return BridgeParams(
        pos_embed=resize_pos_embed(src_params.pos_embed, tgt_cfg.feature_size),
        resamplers=resamplers,
        out_proj=_clone(src_params.out_proj),
    )


@dataclass(frozen=True)
class ScalePreservation:
    scale_index: int
    source_index: int
    kind: str  # "inherit", "inflated", or "approximate init"
    max_deviation: float


@dataclass(frozen=True)
class PreservationReport:
    entries: tuple[ScalePreservation, ...]
    tolerance: float

    @property
    def max_deviation(self) -> float:
        exact = [e.max_deviation for e in self.entries if e.kind != "approximate init"]
        return max(exact, default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tolerance


def functional_preservation_check(
    src_params: BridgeParams,
    tgt_params: BridgeParams,
    plan: ScalePlan,
    tolerance: float = 1e-6,
    seed: int = 0,
) -> PreservationReport:
    """Compare source and migrated resamplers on identical window features.

    Scales whose per-window query count changed cannot be compared pointwise
    and are reported as "approximate init" rather than failed.
    """
    rng = np.random.default_rng(seed)
    entries = []
    for ti, (entry, spec) in enumerate(zip(plan.scale_map, plan.target_cfg.scales)):
        src_r = src_params.resamplers[entry.source_index]
        tgt_r = tgt_params.resamplers[ti]
        if src_r.n_queries != tgt_r.n_queries:
            entries.append(
                ScalePreservation(ti, entry.source_index, "approximate init", float("nan"))
            )
            continue
        area = spec.window_size**2
        channels = plan.target_cfg.channels
        feats = [
            Tensor(rng.normal(size=(area, channels)))
            for _ in range(plan.target_cfg.levels)
        ]
        a = resample_window(src_r, feats)
        b = resample_window(tgt_r, feats)
        dev = float(np.max(np.abs(a.data - b.data)))
        kind = "inherit" if entry.inherit else "inflated"
        entries.append(ScalePreservation(ti, entry.source_index, kind, dev))
    return PreservationReport(tuple(entries), tolerance)
