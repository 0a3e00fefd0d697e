"""Multi-scale token bridge: configs, token counting, and the full forward pass.

A bridge turns one square feature map (or a stack of them from several
backbone depths) into a single ordered token sequence. Each configured scale
partitions the feature grid into windows of its own size and condenses every
window into a fixed number of tokens with a dedicated resampler. Scales are
ordered coarse to fine, so the sequence starts with few tokens summarizing
large regions and ends with many tokens covering small ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cos.numerics import ShapeError, Tensor, concat, matmul
from cos.resampler import (
    LevelStack,
    ResamplerParams,
    init_resampler,
    resample_scale,
)
from cos.windowing import DivisibilityError, partition


@dataclass(frozen=True)
class ScaleSpec:
    window_size: int
    queries_per_window: int


@dataclass(frozen=True)
class CosConfig:
    resolution: int
    patch_size: int
    channels: int
    model_dim: int
    heads: int
    levels: int
    out_dim: int
    scales: tuple[ScaleSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(self.scales))

    @property
    def feature_size(self) -> int:
        return self.resolution // self.patch_size


@dataclass(frozen=True)
class Violation:
    field_name: str
    message: str

    def __str__(self) -> str:
        return f"{self.field_name}: {self.message}"


class ConfigError(ValueError):
    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


def validate_config(cfg: CosConfig) -> list[Violation]:
    """Collect every violated config invariant, empty list when valid."""
    bad: list[Violation] = []

    def check(ok, field_name, message):
        if not ok:
            bad.append(Violation(field_name, message))

    check(cfg.resolution >= 1, "resolution", f"must be positive, got {cfg.resolution}")
    check(cfg.patch_size >= 1, "patch_size", f"must be positive, got {cfg.patch_size}")
    if cfg.resolution >= 1 and cfg.patch_size >= 1:
        check(
            cfg.resolution % cfg.patch_size == 0,
            "patch_size",
            f"{cfg.patch_size} does not divide resolution {cfg.resolution}",
        )
    check(cfg.channels >= 1, "channels", f"must be positive, got {cfg.channels}")
    check(cfg.model_dim >= 1, "model_dim", f"must be positive, got {cfg.model_dim}")
    check(cfg.heads >= 1, "heads", f"must be positive, got {cfg.heads}")
    if cfg.model_dim >= 1 and cfg.heads >= 1:
        check(
            cfg.model_dim % cfg.heads == 0,
            "heads",
            f"{cfg.heads} heads do not divide model_dim {cfg.model_dim}",
        )
    check(cfg.levels >= 1, "levels", f"must be positive, got {cfg.levels}")
    check(cfg.out_dim >= 1, "out_dim", f"must be positive, got {cfg.out_dim}")
    check(len(cfg.scales) >= 1, "scales", "at least one scale is required")

    grid = cfg.feature_size if cfg.patch_size >= 1 else 0
    for i, s in enumerate(cfg.scales):
        check(s.window_size >= 1, f"scales[{i}].window_size", f"must be positive, got {s.window_size}")
        check(
            s.queries_per_window >= 1,
            f"scales[{i}].queries_per_window",
            f"must be positive, got {s.queries_per_window}",
        )
        if grid >= 1 and s.window_size >= 1:
            check(
                grid % s.window_size == 0,
                f"scales[{i}].window_size",
                f"{s.window_size} does not divide feature grid {grid}",
            )
    for i in range(1, len(cfg.scales)):
        check(
            cfg.scales[i].window_size < cfg.scales[i - 1].window_size,
            f"scales[{i}].window_size",
            f"windows must strictly decrease coarse to fine, got "
            f"{cfg.scales[i - 1].window_size} then {cfg.scales[i].window_size}",
        )
    return bad


def check_config(cfg: CosConfig) -> None:
    violations = validate_config(cfg)
    if violations:
        raise ConfigError(violations)


def token_count(cfg: CosConfig) -> int:
    """Total sequence length: sum over scales of (L/W_i)^2 windows times N_i."""
    check_config(cfg)
    grid = cfg.feature_size
    return sum((grid // s.window_size) ** 2 * s.queries_per_window for s in cfg.scales)


@dataclass
class BridgeParams:
    pos_embed: Tensor  # (L, L, C), added to every feature level
    resamplers: list[ResamplerParams]  # one per scale, coarse to fine
    out_proj: Tensor  # (D, D_out), shared across scales

    def named_tensors(self) -> dict[str, Tensor]:
        """Flat name -> tensor view of every learnable array, fixed order."""
        out = {"pos_embed": self.pos_embed, "out_proj": self.out_proj}
        for i, r in enumerate(self.resamplers):
            pre = f"scales.{i}"
            out[f"{pre}.queries"] = r.queries
            out[f"{pre}.feat_proj"] = r.feat_proj
            for l, b in enumerate(r.blocks):
                bp = f"{pre}.levels.{l}"
                out[f"{bp}.q_proj"] = b.q_proj
                out[f"{bp}.k_proj"] = b.k_proj
                out[f"{bp}.v_proj"] = b.v_proj
                out[f"{bp}.o_proj"] = b.o_proj
                out[f"{bp}.ln_q.gain"] = b.ln_q.gain
                out[f"{bp}.ln_q.bias"] = b.ln_q.bias
                out[f"{bp}.ln_kv.gain"] = b.ln_kv.gain
                out[f"{bp}.ln_kv.bias"] = b.ln_kv.bias
            out[f"{pre}.mlp.ln.gain"] = r.mlp.ln.gain
            out[f"{pre}.mlp.ln.bias"] = r.mlp.ln.bias
            out[f"{pre}.mlp.w_in"] = r.mlp.w_in
            out[f"{pre}.mlp.w_out"] = r.mlp.w_out
        return out


def init_bridge(cfg: CosConfig, rng: np.random.Generator) -> BridgeParams:
    check_config(cfg)
    grid = cfg.feature_size
    return BridgeParams(
        pos_embed=Tensor(
            rng.normal(0.0, 0.02, (grid, grid, cfg.channels)), requires_grad=True
        ),
        resamplers=[
            init_resampler(
                s.queries_per_window, cfg.channels, cfg.model_dim, cfg.heads, cfg.levels, rng
            )
            for s in cfg.scales
        ],
        out_proj=Tensor(
            rng.normal(0.0, 1.0 / np.sqrt(cfg.model_dim), (cfg.model_dim, cfg.out_dim)),
            requires_grad=True,
        ),
    )


@dataclass
class TokenSequence:
    tokens: Tensor  # (N, D_out)
    provenance: np.ndarray  # (N, 3) int: scale index, window index, query index
    scale_window_sizes: tuple[int, ...] = field(default=())

    def __len__(self) -> int:
        return self.tokens.shape[0]

    @property
    def window_size_per_token(self) -> np.ndarray:
        sizes = np.asarray(self.scale_window_sizes, dtype=np.int64)
        return sizes[self.provenance[:, 0]]


def forward(cfg: CosConfig, params: BridgeParams, stack: LevelStack) -> TokenSequence:
    """Run every scale's resampler and emit the coarse-to-fine token sequence."""
    check_config(cfg)
    grid = cfg.feature_size
    want = (grid, grid, cfg.channels)
    if stack.levels[0].shape != want:
        raise ShapeError(f"feature levels must be {want}, got {stack.levels[0].shape}")
    if len(stack) != cfg.levels:
        raise ShapeError(f"config expects {cfg.levels} feature levels, got {len(stack)}")
    if len(params.resamplers) != len(cfg.scales):
        raise ShapeError(
            f"config has {len(cfg.scales)} scales but params carry {len(params.resamplers)}"
        )

    positioned = [lvl + params.pos_embed for lvl in stack.levels]
    chunks = []
    prov_rows = []
    for si, (spec, res) in enumerate(zip(cfg.scales, params.resamplers)):
        if res.n_queries != spec.queries_per_window:
            raise ShapeError(
                f"scale {si}: params have {res.n_queries} queries, "
                f"config wants {spec.queries_per_window}"
            )
        wfs = [partition(lvl, spec.window_size) for lvl in positioned]
        toks, prov = resample_scale(res, wfs)
        chunks.append(toks)
        prov_rows.append(
            np.column_stack([np.full(len(prov), si, dtype=np.int64), prov])
        )
    merged = chunks[0] if len(chunks) == 1 else concat(chunks, axis=0)
    tokens = matmul(merged, params.out_proj)
    seq = TokenSequence(
        tokens=tokens,
        provenance=np.concatenate(prov_rows, axis=0),
        scale_window_sizes=tuple(s.window_size for s in cfg.scales),
    )
    if len(seq) != token_count(cfg):
        raise ShapeError(
            f"produced {len(seq)} tokens but config counts {token_count(cfg)}"
        )
    return seq
