"""Self-contained invariant suites with machine-readable results.

Each suite re-verifies one family of system guarantees end to end: exact
token counts, bit-exact partition round trips, window locality, coarse-to-
fine ordering, gradient correctness, scaling-plan ratios with preservation,
cost-model calibration, checkpoint round trips, and training determinism.
The full set runs in well under a minute on a laptop CPU.
"""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cos.assembly import forward, init_bridge, token_count, validate_config
from cos.checkpoint import load_tensors, save_tensors
from cos.configs import OptimizerConfig, RunConfig
from cos.cost_model import fit_cost_params, step_time, walltime
from cos.numerics import Tensor, grad_check, mse
from cos.presets import GRADCHECK_TOY, PRETRAIN, SCALE_PAIRS, TARGETS, ladder, make_config
from cos.resampler import LevelStack
from cos.scaling import functional_preservation_check, migrate_params, plan_scale
from cos.training import make_targets, synthetic_stack, task_maps, train_toy
from cos.windowing import partition, unpartition


@dataclass(frozen=True)
class PropertyResult:
    suite: str
    name: str
    passed: bool
    detail: str
    seconds: float

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "name": self.name,
            "passed": self.passed,
            "detail": self.detail,
            "seconds": round(self.seconds, 4),
        }


@dataclass(frozen=True)
class PropertyReport:
    results: tuple[PropertyResult, ...]
    seconds: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def counts(self) -> tuple[int, int]:
        good = sum(r.passed for r in self.results)
        return good, len(self.results)

    def to_dict(self) -> dict:
        good, total = self.counts
        return {
            "passed": self.passed,
            "ok": good,
            "total": total,
            "seconds": round(self.seconds, 4),
            "results": [r.to_dict() for r in self.results],
        }


def _suite_counts():
    for name, cfg, expected in ladder():
        got = token_count(cfg)
        yield name, got == expected, f"{got} tokens, expected {expected}"
    toy = make_config(112, [(8, 13)], channels=3, model_dim=8, heads=2, out_dim=4)
    yield "single_full_window", token_count(toy) == 13, "W=L counts queries only"


def _suite_roundtrip():
    rng = np.random.default_rng(0)
    cases = 0
    worst = "all bit-exact"
    ok = True
    for _ in range(40):
        grid = int(rng.choice([2, 4, 6, 8, 12, 16]))
        divisors = [d for d in range(1, grid + 1) if grid % d == 0]
        w = int(rng.choice(divisors))
        channels = int(rng.integers(1, 6))
        x = Tensor(rng.normal(size=(grid, grid, channels)))
        back = unpartition(partition(x, w))
        cases += 1
        if not np.array_equal(back.data, x.data):
            ok = False
            worst = f"mismatch at L={grid} W={w} C={channels}"
            break
    yield f"partition_unpartition_{cases}_cases", ok, worst


def _suite_locality():
    cfg = PRETRAIN[80]
    params = init_bridge(cfg, np.random.default_rng(1))
    rng = np.random.default_rng(2)
    g = cfg.feature_size
    failures = 0
    trials = 0
    for si, spec in enumerate(cfg.scales):
        n_windows = (g // spec.window_size) ** 2
        if n_windows == 1:
            continue
        for _ in range(6):
            trials += 1
            stack = LevelStack(
                [Tensor(rng.normal(size=(g, g, cfg.channels))) for _ in range(cfg.levels)]
            )
            base = forward(cfg, params, stack)
            target_w = int(rng.integers(0, n_windows))
            w = spec.window_size
            r0, c0 = divmod(target_w, g // w)
            bumped = []
            for lvl in stack.levels:
                arr = lvl.data + rng.normal(size=lvl.shape)
                arr[r0 * w : (r0 + 1) * w, c0 * w : (c0 + 1) * w] = lvl.data[
                    r0 * w : (r0 + 1) * w, c0 * w : (c0 + 1) * w
                ]
                bumped.append(Tensor(arr))
            after = forward(cfg, params, LevelStack(bumped))
            mask = (base.provenance[:, 0] == si) & (base.provenance[:, 1] == target_w)
            if not np.array_equal(base.tokens.data[mask], after.tokens.data[mask]):
                failures += 1
    yield (
        "outside_perturbation_changes_nothing",
        failures == 0,
        f"{trials - failures}/{trials} trials bit-exact",
    )


def _suite_ordering():
    rng = np.random.default_rng(3)
    bad = 0
    trials = 25
    for _ in range(trials):
        grid = int(2 ** rng.integers(2, 5))
        divisors = [d for d in range(1, grid + 1) if grid % d == 0]
        k = int(rng.integers(1, min(3, len(divisors)) + 1))
        windows = sorted(rng.choice(divisors, size=k, replace=False).tolist(), reverse=True)
        scales = [(int(w), int(rng.integers(1, 5))) for w in windows]
        cfg = make_config(grid * 14, scales, channels=3, model_dim=8, heads=2, out_dim=4)
        if validate_config(cfg):
            bad += 1
            continue
        params = init_bridge(cfg, rng)
        stack = LevelStack(
            [Tensor(rng.normal(size=(grid, grid, 3))) for _ in range(cfg.levels)]
        )
        seq = forward(cfg, params, stack)
        sizes = seq.window_size_per_token
        if not (np.all(np.diff(sizes) <= 0) and len(seq) == token_count(cfg)):
            bad += 1
    yield (
        "window_sizes_non_increasing",
        bad == 0,
        f"{trials - bad}/{trials} fuzzed configs ordered coarse to fine",
    )


def _suite_gradcheck():
    cfg = GRADCHECK_TOY
    params = init_bridge(cfg, np.random.default_rng(4))
    rng = np.random.default_rng(5)
    g = cfg.feature_size
    stack = LevelStack(
        [Tensor(rng.normal(size=(g, g, cfg.channels))) for _ in range(cfg.levels)]
    )
    target = Tensor(rng.normal(size=(token_count(cfg), cfg.out_dim)))

    def loss():
        return mse(forward(cfg, params, stack).tokens, target)

    report = grad_check(loss, params.named_tensors(), tol=1e-3)
    n_params = sum(e.n_entries for e in report.entries)
    yield (
        "bridge_reverse_mode_vs_finite_differences",
        report.passed,
        f"max rel err {report.max_rel_error:.3e} over {n_params} parameter entries",
    )


def _suite_scaling():
    want = {(32, 528): 16.5, (48, 784): 784 / 48, (80, 1296): 16.2}
    for src_n, tgt_n in SCALE_PAIRS:
        plan = plan_scale(PRETRAIN[src_n], TARGETS[tgt_n])
        expected = want[(src_n, tgt_n)]
        ok = abs(plan.token_ratio - expected) < 1e-9 and plan.token_ratio >= 16
        yield (
            f"plan_{src_n}_to_{tgt_n}",
            ok,
            f"token_ratio {plan.token_ratio:.4f}",
        )
    src, tgt = PRETRAIN[80], TARGETS[336]
    params = init_bridge(src, np.random.default_rng(6))
    plan = plan_scale(src, tgt)
    migrated = migrate_params(params, plan)
    report = functional_preservation_check(params, migrated, plan)
    yield (
        "preservation_80_to_336",
        report.passed and report.max_deviation == 0.0,
        f"max deviation {report.max_deviation:.1e}",
    )


def _suite_cost():
    fit = fit_cost_params([(32, 0.27), (336, 1.00)])
    p80 = step_time(fit.params, 80)
    p48 = step_time(fit.params, 48)
    yield "predicts_80_tokens", abs(p80 - 0.42) <= 0.05, f"predicted {p80:.4f}, published 0.42"
    yield "predicts_48_tokens", abs(p48 - 0.35) <= 0.05, f"predicted {p48:.4f}, published 0.35"
    est = walltime(fit.params, PRETRAIN[32], reference=TARGETS[336])
    savings = 1.0 - est.relative
    yield (
        "savings_32_vs_336",
        savings >= 0.70 and abs(savings - 0.73) <= 0.03,
        f"savings {savings:.1%}, published 73%",
    )
    rows = sorted(ladder(), key=lambda r: r[2])
    times = [walltime(fit.params, cfg).walltime for _, cfg, _ in rows]
    totals = [t for _, _, t in rows]
    mono = all(
        (t1 > t0 and w1 > w0) or (t1 == t0 and abs(w1 - w0) < 1e-9)
        for (t0, w0), (t1, w1) in zip(zip(totals, times), zip(totals[1:], times[1:]))
    )
    yield "walltime_monotone_in_tokens", mono, f"{len(rows)} ladder configs swept"


def _suite_checkpoint():
    cfg = PRETRAIN[32]
    params = init_bridge(cfg, np.random.default_rng(7))
    named = params.named_tensors()
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "bridge.ckpt"
        save_tensors(path, named)
        loaded = load_tensors(path)
        ok = set(loaded) == set(named) and all(
            np.array_equal(loaded[k], named[k].data.astype("<f4")) for k in named
        )
        save_tensors(path, loaded)
        stable = all(np.array_equal(load_tensors(path)[k], loaded[k]) for k in named)
    yield "save_load_bit_exact", ok, f"{len(named)} tensors round-tripped"
    yield "requantize_stable", stable, "second round trip is byte-identical"


def _suite_training():
    toy = make_config(112, [(4, 4), (2, 1)], channels=4, model_dim=16, heads=2, out_dim=6)
    rc = RunConfig(model=toy, seed=8, steps=60, batch_size=1,
                   optimizer=OptimizerConfig(learning_rate=3e-3))
    _, a = train_toy(rc)
    _, b = train_toy(rc)
    yield (
        "loss_halves_within_60_steps",
        a.final_loss <= 0.5 * a.initial_loss,
        f"{a.initial_loss:.4f} -> {a.final_loss:.4f}",
    )
    yield "same_seed_bit_identical", a.losses == b.losses, f"{len(a.losses)} steps compared"
    frozen = RunConfig(model=toy, seed=9, steps=5, batch_size=1,
                       optimizer=OptimizerConfig(learning_rate=0.0, min_lr=0.0))
    _, c = train_toy(frozen)
    spread = max(c.losses) - min(c.losses)
    yield "zero_lr_freezes_loss", spread <= 1e-12, f"loss spread {spread:.1e}"
    stack = synthetic_stack(toy, 10)
    targets = make_targets(toy, stack, task_maps(toy, 10))
    yield (
        "targets_align_with_token_count",
        targets.shape == (token_count(toy), toy.out_dim),
        f"target shape {targets.shape}",
    )


SUITES = {
    "counts": _suite_counts,
    "roundtrip": _suite_roundtrip,
    "locality": _suite_locality,
    "ordering": _suite_ordering,
    "gradcheck": _suite_gradcheck,
    "scaling": _suite_scaling,
    "cost": _suite_cost,
    "checkpoint": _suite_checkpoint,
    "training": _suite_training,
}


def run_properties(suites: list[str] | None = None) -> PropertyReport:
    chosen = list(SUITES) if not suites else suites
    unknown = [s for s in chosen if s not in SUITES]
    if unknown:
        raise ValueError(f"unknown suites {unknown}; available: {sorted(SUITES)}")
    results = []
    t_all = time.perf_counter()
    for suite in chosen:
        gen = SUITES[suite]()
        while True:
            t0 = time.perf_counter()
            try:
                name, passed, detail = next(gen)
            except StopIteration:
                break
            results.append(
                PropertyResult(suite, name, bool(passed), detail, time.perf_counter() - t0)
            )
    return PropertyReport(tuple(results), time.perf_counter() - t_all)
