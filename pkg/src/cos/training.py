"""Desk-scale synthetic training for the token bridge.

The task stands in for captioning-style pre-training at a size where exact
checks are possible. Feature maps are Gaussian noise with a planted
per-window offset on the finest configured grid, so window contents carry a
recoverable signal. The regression target for a token produced by (scale,
window, query) is a fixed random linear read-out of that window's pooled
features; the read-out matrix depends only on the query index, so the
mapping is stable under resolution and window scaling.

The dataset is a fixed collection of `batch_size` feature stacks generated
once per run. Every step trains on the full collection, which keeps the
loop exactly deterministic: a zero learning rate reproduces the identical
loss at every step, and equal seeds give bit-identical curves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cos.assembly import BridgeParams, CosConfig, check_config, forward, init_bridge
from cos.configs import RunConfig
from cos.numerics import NonFiniteError, Tensor, mse, mul
from cos.resampler import LevelStack
from cos.scaling import ScalePlan, functional_preservation_check, migrate_params

QUERY_FAMILIES = 16  # distinct per-query read-out matrices in the task


class TrainingDivergedError(RuntimeError):
    pass


def synthetic_stack(cfg: CosConfig, seed) -> LevelStack:
    """Gaussian features plus a planted offset per finest-scale window."""
    check_config(cfg)
    rng = np.random.default_rng(seed)
    g = cfg.feature_size
    w = cfg.scales[-1].window_size
    cells = g // w
    offsets = rng.normal(0.0, 1.0, (cells, cells, cfg.channels))
    planted = np.repeat(np.repeat(offsets, w, axis=0), w, axis=1)
    levels = [
        Tensor(rng.normal(0.0, 0.5, (g, g, cfg.channels)) + planted)
        for _ in range(cfg.levels)
    ]
    return LevelStack(levels)


def task_maps(cfg: CosConfig, task_seed: int) -> np.ndarray:
    """Per-query-family read-out matrices, (QUERY_FAMILIES, C, out_dim)."""
    rng = np.random.default_rng(task_seed)
    return rng.normal(
        0.0, 1.0 / math.sqrt(cfg.channels), (QUERY_FAMILIES, cfg.channels, cfg.out_dim)
    )


def pooled_windows(cfg: CosConfig, stack: LevelStack, window_size: int) -> np.ndarray:
    """Mean feature vector of every window, over cells and levels; row-major."""
    g = cfg.feature_size
    per_level = []
    for lvl in stack.levels:
        blocks = lvl.data.reshape(g // window_size, window_size, g // window_size,
                                  window_size, cfg.channels)
        per_level.append(blocks.mean(axis=(1, 3)).reshape(-1, cfg.channels))
    return np.mean(per_level, axis=0)


def make_targets(cfg: CosConfig, stack: LevelStack, maps: np.ndarray) -> np.ndarray:
    """Target tokens in forward() order: scales coarse to fine, windows row-major."""
    rows = []
    for spec in cfg.scales:
        pooled = pooled_windows(cfg, stack, spec.window_size)
        for j in range(pooled.shape[0]):
            for q in range(spec.queries_per_window):
                rows.append(pooled[j] @ maps[q % QUERY_FAMILIES])
    return np.asarray(rows)


def lr_at(step: int, steps: int, learning_rate: float, warmup_steps: int, min_lr: float) -> float:
    """Linear warmup into a cosine decay that lands on min_lr."""
    if step < warmup_steps:
        return learning_rate * (step + 1) / warmup_steps
    span = max(1, steps - warmup_steps)
    progress = (step - warmup_steps) / span
    return min_lr + 0.5 * (learning_rate - min_lr) * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam with decoupled weight decay over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], beta1: float, beta2: float,
                 weight_decay: float, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2 = beta1, beta2
        self.weight_decay = weight_decay
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1**self.t)
            v_hat = self.v[name] / (1 - self.beta2**self.t)
            update = lr * m_hat / (np.sqrt(v_hat) + self.eps) + lr * self.weight_decay * p.data
            p.assign(p.data - update)


@dataclass
class TrainReport:
    losses: list[float]  # loss before each step's update
    final_loss: float  # loss after the last update
    steps: int
    warmup_steps: int

    @property
    def initial_loss(self) -> float:
        return self.losses[0]


def _dataset(rc: RunConfig):
    maps = task_maps(rc.model, rc.resolve_task_seed())
    stacks, targets = [], []
    for i in range(rc.batch_size):
        stack = synthetic_stack(rc.model, (rc.seed, 1000 + i))
        stacks.append(stack)
        targets.append(Tensor(make_targets(rc.model, stack, maps)))
    return stacks, targets


def train_toy(rc: RunConfig, params: BridgeParams | None = None) -> tuple[BridgeParams, TrainReport]:
    """Train the bridge on the synthetic task; deterministic in rc.seed."""
    check_config(rc.model)
    if rc.steps < 1:
        raise ValueError(f"steps must be >= 1, got {rc.steps}")
    if rc.batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {rc.batch_size}")
    if params is None:
        params = init_bridge(rc.model, np.random.default_rng(rc.seed))

    stacks, targets = _dataset(rc)
    named = params.named_tensors()
    opt = AdamW(named, rc.optimizer.beta1, rc.optimizer.beta2, rc.optimizer.weight_decay)
    warmup = rc.optimizer.resolve_warmup(rc.steps)

    def evaluate() -> Tensor:
        per_stack = [
            mse(forward(rc.model, params, stack).tokens, tgt)
            for stack, tgt in zip(stacks, targets)
        ]
        total = per_stack[0]
        for extra in per_stack[1:]:
            total = total + extra
        return mul(total, 1.0 / len(per_stack))

    losses: list[float] = []
    for step in range(rc.steps):
        for p in named.values():
            p.zero_grad()
        try:
            loss = evaluate()
            loss.backward()
        except NonFiniteError as err:
            raise TrainingDivergedError(
                f"non-finite values at step {step} "
                f"(last finite loss {losses[-1] if losses else float('nan')}): {err}"
            ) from err
        losses.append(loss.item())
        opt.step(lr_at(step, rc.steps, rc.optimizer.learning_rate, warmup, rc.optimizer.min_lr))

    try:
        final_loss = evaluate().item()
    except NonFiniteError as err:
        raise TrainingDivergedError(f"non-finite values after final update: {err}") from err
    return params, TrainReport(losses, final_loss, rc.steps, warmup)


@dataclass
class PipelineReport:
    stage1: TrainReport
    stage2: TrainReport
    token_ratio: float
    preservation_passed: bool
    preservation_max_deviation: float


def pipeline_pretrain_scale_finetune(
    rc_small: RunConfig, plan: ScalePlan, rc_large: RunConfig
) -> tuple[BridgeParams, PipelineReport]:
    """Train small, migrate parameters along the plan, keep training large."""
    if plan.source_cfg != rc_small.model:
        raise ValueError("plan source config does not match the small run config")
    if plan.target_cfg != rc_large.model:
        raise ValueError("plan target config does not match the large run config")
    small_params, stage1 = train_toy(rc_small)
    large_params = migrate_params(small_params, plan)
    preservation = functional_preservation_check(small_params, large_params, plan)
    large_params, stage2 = train_toy(rc_large, params=large_params)
    report = PipelineReport(
        stage1=stage1,
        stage2=stage2,
        token_ratio=plan.token_ratio,
        preservation_passed=preservation.passed,
        preservation_max_deviation=preservation.max_deviation,
    )
    return large_params, report
