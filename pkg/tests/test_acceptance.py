"""Top-level acceptance checks, one test per shipped guarantee.

Each test is independent and states its tolerance inline. Together they
cover: exact token arithmetic for the published ladder, the three published
scaling plans with their token ratios, bit-exact partition round trips,
window locality, reverse-mode gradient correctness, migration preservation,
desk-scale training behavior, cost-model calibration, coarse-to-fine
ordering, and checkpoint integrity plus the full property suite.
"""

import time

import numpy as np
import pytest

from cos.assembly import forward, init_bridge, token_count, validate_config
from cos.checkpoint import load_tensors, save_tensors
from cos.cli import main
from cos.configs import OptimizerConfig, RunConfig, cos_config_to_dict, save_json
from cos.cost_model import fit_cost_params, step_time, walltime
from cos.numerics import Tensor, grad_check, mse
from cos.presets import GRADCHECK_TOY, PRETRAIN, SCALE_PAIRS, TARGETS, ladder, make_config
from cos.resampler import LevelStack
from cos.scaling import functional_preservation_check, migrate_params, plan_scale
from cos.training import pipeline_pretrain_scale_finetune, train_toy
from cos.windowing import partition, unpartition


def test_01_published_token_totals_exact(tmp_path, capsys):
    """Every published ladder total reproduced exactly through the CLI."""
    t0 = time.perf_counter()
    for name, cfg, expected in ladder():
        path = tmp_path / f"{name}.json"
        save_json(path, cos_config_to_dict(cfg))
        assert main(["tokens", str(path)]) == 0
        printed = int(capsys.readouterr().out.strip())
        assert printed == expected, f"{name}: printed {printed}, published {expected}"
    assert time.perf_counter() - t0 < 1.0, "token counting must be instant"


def test_02_published_scaling_plans_and_ratios():
    """32->528, 48->784, 80->1296 plans exist, validate, and hit the ratios."""
    expected_ratio = {(32, 528): 16.5, (48, 784): 784 / 48, (80, 1296): 16.2}
    for src_n, tgt_n in SCALE_PAIRS:
        src, tgt = PRETRAIN[src_n], TARGETS[tgt_n]
        assert validate_config(src) == [] and validate_config(tgt) == []
        assert token_count(src) == src_n and token_count(tgt) == tgt_n
        plan = plan_scale(src, tgt)
        assert plan.token_ratio == pytest.approx(expected_ratio[(src_n, tgt_n)], abs=1e-9)
    assert plan_scale(PRETRAIN[80], TARGETS[1296]).token_ratio >= 16


def test_03_partition_round_trip_200_randomized_cases():
    rng = np.random.default_rng(2024)
    for trial in range(200):
        grid = int(rng.choice([1, 2, 3, 4, 6, 8, 12, 16, 24, 32]))
        divisors = [d for d in range(1, grid + 1) if grid % d == 0]
        w = int(rng.choice(divisors))
        channels = int(rng.integers(1, 9))
        x = Tensor(rng.normal(size=(grid, grid, channels)))
        back = unpartition(partition(x, w))
        assert np.array_equal(back.data, x.data), (
            f"trial {trial}: L={grid} W={w} C={channels} not bit-exact"
        )


def test_04_window_locality_50_randomized_trials():
    """Perturbing everything outside a window never moves that window's tokens."""
    cfg = PRETRAIN[80]
    params = init_bridge(cfg, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    g = cfg.feature_size
    for trial in range(50):
        stack = LevelStack(
            [Tensor(rng.normal(size=(g, g, cfg.channels))) for _ in range(cfg.levels)]
        )
        base = forward(cfg, params, stack)
        for si, spec in enumerate(cfg.scales):
            w = spec.window_size
            n_windows = (g // w) ** 2
            j = int(rng.integers(0, n_windows))
            r0, c0 = divmod(j, g // w)
            bumped_levels = []
            for lvl in stack.levels:
                # replace everything, then restore the chosen window, so the
                # outside is fully rewritten (empty for a full-grid window)
                arr = rng.normal(size=lvl.shape)
                arr[r0 * w : (r0 + 1) * w, c0 * w : (c0 + 1) * w] = lvl.data[
                    r0 * w : (r0 + 1) * w, c0 * w : (c0 + 1) * w
                ]
                bumped_levels.append(Tensor(arr))
            after = forward(cfg, params, LevelStack(bumped_levels))
            mask = (base.provenance[:, 0] == si) & (base.provenance[:, 1] == j)
            assert mask.sum() == spec.queries_per_window
            assert np.array_equal(base.tokens.data[mask], after.tokens.data[mask]), (
                f"trial {trial}: scale {si} window {j} tokens moved"
            )


def test_05_gradients_match_finite_differences_under_60s():
    """Full two-scale, two-level bridge: reverse mode vs central differences."""
    t0 = time.perf_counter()
    cfg = GRADCHECK_TOY
    assert len(cfg.scales) == 2 and cfg.levels == 2
    params = init_bridge(cfg, np.random.default_rng(3))
    rng = np.random.default_rng(4)
    g = cfg.feature_size
    stack = LevelStack(
        [Tensor(rng.normal(size=(g, g, cfg.channels))) for _ in range(cfg.levels)]
    )
    target = Tensor(rng.normal(size=(token_count(cfg), cfg.out_dim)))

    def loss():
        return mse(forward(cfg, params, stack).tokens, target)

    report = grad_check(loss, params.named_tensors(), tol=1e-3)
    elapsed = time.perf_counter() - t0
    assert report.passed, (
        f"max relative error {report.max_rel_error:.3e} at {report.worst_param}"
    )
    assert elapsed < 60, f"gradient check took {elapsed:.1f}s"


def test_06_migration_preserves_unchanged_scales_within_1e6():
    """80 tokens at 224 migrated onto 336 tokens at 448 changes nothing."""
    src_cfg, tgt_cfg = PRETRAIN[80], TARGETS[336]
    assert tgt_cfg.resolution == 448
    params = init_bridge(src_cfg, np.random.default_rng(5))
    plan = plan_scale(src_cfg, tgt_cfg)
    migrated = migrate_params(params, plan)
    report = functional_preservation_check(params, migrated, plan, tolerance=1e-6)
    comparable = [e for e in report.entries if e.kind != "approximate init"]
    assert len(comparable) == len(tgt_cfg.scales), "every scale kept its query count"
    for entry in comparable:
        assert entry.max_deviation <= 1e-6, (
            f"scale {entry.scale_index}: deviation {entry.max_deviation:.2e}"
        )


def test_07_desk_training_halves_loss_and_migration_keeps_gains():
    opt = OptimizerConfig(learning_rate=3e-3)
    rc_small = RunConfig(model=PRETRAIN[80], seed=7, steps=150, batch_size=1, optimizer=opt)
    assert rc_small.steps <= 500
    plan = plan_scale(PRETRAIN[80], TARGETS[336])
    rc_large = RunConfig(model=TARGETS[336], seed=7, steps=300, batch_size=1, optimizer=opt)

    _, report = pipeline_pretrain_scale_finetune(rc_small, plan, rc_large)
    assert report.stage1.final_loss <= 0.5 * report.stage1.initial_loss, (
        f"pre-train stalled: {report.stage1.initial_loss:.4f} -> "
        f"{report.stage1.final_loss:.4f} in {rc_small.steps} steps"
    )
    assert report.stage2.final_loss <= report.stage1.final_loss, (
        f"post-migration training regressed: {report.stage2.final_loss:.4f} > "
        f"{report.stage1.final_loss:.4f}"
    )
    _, again = train_toy(rc_small)
    assert again.losses == report.stage1.losses, "same seed must give identical curves"
    assert again.final_loss == report.stage1.final_loss


def test_08_cost_model_calibration():
    fit = fit_cost_params([(32, 0.27), (336, 1.00)])
    assert fit.max_abs_residual < 1e-12, "two-point fit must be exact"
    predicted_80 = step_time(fit.params, 80)
    predicted_48 = step_time(fit.params, 48)
    assert predicted_80 == pytest.approx(0.42, abs=0.05), f"80 tokens: {predicted_80:.4f}"
    assert predicted_48 == pytest.approx(0.35, abs=0.05), f"48 tokens: {predicted_48:.4f}"
    est = walltime(fit.params, PRETRAIN[32], reference=TARGETS[336])
    savings = 1.0 - est.relative
    assert savings >= 0.70, f"savings {savings:.1%} below 70%"
    assert savings == pytest.approx(0.73, abs=0.03), f"savings {savings:.1%} vs published 73%"


def test_09_coarse_to_fine_ordering_100_fuzzed_configs():
    rng = np.random.default_rng(99)
    checked = 0
    while checked < 100:
        grid = int(2 ** rng.integers(2, 5))
        divisors = [d for d in range(1, grid + 1) if grid % d == 0]
        k = int(rng.integers(1, min(3, len(divisors)) + 1))
        windows = sorted(rng.choice(divisors, size=k, replace=False).tolist(), reverse=True)
        scales = [(int(w), int(rng.integers(1, 5))) for w in windows]
        cfg = make_config(
            grid * 14, scales,
            channels=int(rng.integers(1, 5)),
            model_dim=8, heads=int(rng.choice([1, 2, 4])), out_dim=4,
            levels=int(rng.integers(1, 3)),
        )
        if validate_config(cfg):
            continue
        params = init_bridge(cfg, rng)
        stack = LevelStack(
            [Tensor(rng.normal(size=(grid, grid, cfg.channels))) for _ in range(cfg.levels)]
        )
        seq = forward(cfg, params, stack)
        sizes = seq.window_size_per_token
        assert np.all(np.diff(sizes) <= 0), f"config {checked}: ordering violated"
        assert len(seq) == token_count(cfg)
        checked += 1


def test_10_checkpoint_round_trip_and_full_property_suite(tmp_path, capsys):
    params = init_bridge(PRETRAIN[48], np.random.default_rng(6))
    named = params.named_tensors()
    path = tmp_path / "bridge.ckpt"
    save_tensors(path, named)
    loaded = load_tensors(path)
    for name, tensor in named.items():
        assert np.array_equal(loaded[name], tensor.data.astype("<f4")), name

    t0 = time.perf_counter()
    code = main(["props"])
    elapsed = time.perf_counter() - t0
    out = capsys.readouterr().out
    assert code == 0, f"property suite failed:\n{out}"
    assert "FAIL" not in out
    assert elapsed < 300, f"property suite took {elapsed:.0f}s, budget is 5 minutes"
