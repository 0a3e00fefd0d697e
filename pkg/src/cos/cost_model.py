"""Analytical pre-training cost model, affine in the token count.

A language-model training step is priced as a fixed per-step overhead (data
loading, the frozen vision backbone, optimizer bookkeeping) plus a cost per
sequence token, where the sequence is the visual tokens followed by the text
tokens. Parameters are calibrated from published relative walltimes, so the
natural unit for costs is "fraction of the reference config's step", not
seconds; the arithmetic is unit-agnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from cos.assembly import CosConfig, token_count

# mean text tokens per training sample and the published pre-train recipe
# (512-sequence batches for 120k steps)
DEFAULT_TEXT_LEN = 23.32
DEFAULT_BATCH_SIZE = 512
DEFAULT_TOTAL_SAMPLES = 512 * 120_000


@dataclass(frozen=True)
class CostParams:
    fixed_step_cost: float
    per_token_cost: float
    text_len: float = DEFAULT_TEXT_LEN
    batch_size: int = DEFAULT_BATCH_SIZE
    total_samples: int = DEFAULT_TOTAL_SAMPLES

    def __post_init__(self):
        if self.fixed_step_cost < 0:
            raise ValueError(f"fixed_step_cost must be >= 0, got {self.fixed_step_cost}")
        if self.per_token_cost < 0:
            raise ValueError(f"per_token_cost must be >= 0, got {self.per_token_cost}")
        if self.text_len < 0:
            raise ValueError(f"text_len must be >= 0, got {self.text_len}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.total_samples < 0:
            raise ValueError(f"total_samples must be >= 0, got {self.total_samples}")


@dataclass(frozen=True)
class CostEstimate:
    step_time: float
    steps: int
    walltime: float
    relative: float


def step_time(cp: CostParams, visual_tokens: int) -> float:
    """Cost of one optimizer step on sequences of the given visual length."""
    if visual_tokens < 0:
        raise ValueError(f"visual_tokens must be >= 0, got {visual_tokens}")
    return cp.fixed_step_cost + cp.per_token_cost * (visual_tokens + cp.text_len)


@dataclass(frozen=True)
class CostFit:
    params: CostParams
    intercept: float
    slope: float
    residuals: tuple[float, ...]

    @property
    def max_abs_residual(self) -> float:
        return max((abs(r) for r in self.residuals), default=0.0)


def fit_cost_params(
    observations: list[tuple[float, float]],
    text_len: float = DEFAULT_TEXT_LEN,
    batch_size: int = DEFAULT_BATCH_SIZE,
    total_samples: int = DEFAULT_TOTAL_SAMPLES,
) -> CostFit:
    """Least-squares affine fit of relative walltime against visual tokens.

    Each observation is (visual_tokens, relative_walltime). The fitted line
    rel = intercept + slope * tokens is converted to CostParams by charging
    the text tokens to the per-token term, so step_time reproduces the line.
    """
    if len(observations) < 2:
        raise ValueError(f"need at least 2 observations, got {len(observations)}")
    tokens = np.asarray([v for v, _ in observations], dtype=float)
    rel = np.asarray([r for _, r in observations], dtype=float)
    if np.all(tokens == tokens[0]):
        raise ValueError("degenerate observations: every point has the same token count")

    # centered normal equations: exact zero slope on constant observations,
    # where a general SVD solver leaves ~1e-17 noise that breaks validation
    t_mean, r_mean = tokens.mean(), rel.mean()
    slope = ((tokens - t_mean) * (rel - r_mean)).sum() / ((tokens - t_mean) ** 2).sum()
    intercept = r_mean - slope * t_mean
    params = CostParams(
        fixed_step_cost=float(intercept - slope * text_len),
        per_token_cost=float(slope),
        text_len=text_len,
        batch_size=batch_size,
        total_samples=total_samples,
    )
    residuals = tuple(float(step_time(params, v) - r) for v, r in observations)
    return CostFit(params, float(intercept), float(slope), residuals)


def walltime(cp: CostParams, cfg: CosConfig, reference: CosConfig | None = None) -> CostEstimate:
    """Price a full pre-training run of cfg, optionally relative to another config."""
    if cp.batch_size == 0:
        raise ValueError("batch_size must be positive")
    per_step = step_time(cp, token_count(cfg))
    steps = math.ceil(cp.total_samples / cp.batch_size)
    total = per_step * steps
    if reference is None:
        relative = 1.0
    else:
        ref_total = step_time(cp, token_count(reference)) * steps
        if ref_total == 0:
            raise ValueError("reference walltime is zero, relative cost undefined")
        relative = total / ref_total
    return CostEstimate(step_time=per_step, steps=steps, walltime=total, relative=relative)


def with_batch_size(cp: CostParams, batch_size: int) -> CostParams:
    """Same cost surface, different batching of the sample budget."""
    return replace(cp, batch_size=batch_size)
