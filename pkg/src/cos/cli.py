"""Command line interface.

Every subcommand exits 0 exactly when all checks it performs pass, so the
tool can gate scripts and CI. Domain failures (bad configs, corrupt
checkpoints, unmappable scales, divergence) print one diagnostic line on
stderr and exit 1 instead of dumping a traceback.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from cos.assembly import ConfigError, forward, init_bridge, token_count, validate_config
from cos.checkpoint import CheckpointError, load_bridge, save_bridge
from cos.configs import RunConfig, SchemaError, load_cos_config, load_run_config
from cos.cost_model import fit_cost_params, step_time, walltime
from cos.numerics import ShapeError, Tensor, grad_check, mse
from cos.properties import SUITES, run_properties
from cos.resampler import LevelStack
from cos.scaling import UnmappableScaleError, functional_preservation_check, migrate_params, plan_scale
from cos.training import TrainingDivergedError, pipeline_pretrain_scale_finetune, train_toy

# published relative-walltime anchors used when no calibration file is given
DEFAULT_ANCHORS = [(32.0, 0.27), (336.0, 1.00)]

_EXPECTED_ERRORS = (
    SchemaError,
    ConfigError,
    CheckpointError,
    UnmappableScaleError,
    TrainingDivergedError,
    ShapeError,
    FileNotFoundError,
    ValueError,
)


def _synthetic_stack_for(cfg, seed: int) -> LevelStack:
    rng = np.random.default_rng(seed)
    g = cfg.feature_size
    return LevelStack(
        [Tensor(rng.normal(size=(g, g, cfg.channels))) for _ in range(cfg.levels)]
    )


def cmd_tokens(args) -> int:
    cfg = load_cos_config(args.config)
    print(token_count(cfg))
    return 0


def cmd_validate(args) -> int:
    cfg = load_cos_config(args.config)
    violations = validate_config(cfg)
    if not violations:
        print(f"{args.config}: ok ({token_count(cfg)} tokens)")
        return 0
    for v in violations:
        print(f"{args.config}: {v}")
    return 1


def cmd_forward(args) -> int:
    cfg = load_cos_config(args.config)
    params = load_bridge(args.checkpoint, cfg)
    seq = forward(cfg, params, _synthetic_stack_for(cfg, args.synthetic_seed))
    expected = token_count(cfg)
    ordered = bool(np.all(np.diff(seq.window_size_per_token) <= 0))
    norms = np.linalg.norm(seq.tokens.data, axis=1)
    print(f"tokens: {len(seq)} x {cfg.out_dim} (expected {expected})")
    print(f"coarse-to-fine ordering: {'ok' if ordered else 'VIOLATED'}")
    print(f"token norms: mean {norms.mean():.4f}, min {norms.min():.4f}, max {norms.max():.4f}")
    return 0 if (len(seq) == expected and ordered) else 1


def _prepare_output(path: str) -> str:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return path


def cmd_scale(args) -> int:
    src_cfg = load_cos_config(args.src_config)
    tgt_cfg = load_cos_config(args.tgt_config)
    src_params = load_bridge(args.src_checkpoint, src_cfg)
    plan = plan_scale(src_cfg, tgt_cfg)
    tgt_params = migrate_params(src_params, plan)
    report = functional_preservation_check(src_params, tgt_params, plan)
    save_bridge(_prepare_output(args.output), tgt_params)
    print(f"token ratio: {plan.token_ratio:.4f} "
          f"({token_count(src_cfg)} -> {token_count(tgt_cfg)})")
    for entry in report.entries:
        dev = "" if entry.kind == "approximate init" else f", deviation {entry.max_deviation:.2e}"
        print(f"  scale {entry.scale_index} <- source {entry.source_index}: {entry.kind}{dev}")
    print(f"preservation: {'ok' if report.passed else 'FAILED'} "
          f"(max deviation {report.max_deviation:.2e}, tolerance {report.tolerance:.0e})")
    print(f"wrote {args.output}")
    return 0 if report.passed else 1


def cmd_train(args) -> int:
    rc = load_run_config(args.run_config)
    params, report = train_toy(rc)
    save_bridge(_prepare_output(args.output), params)
    print(f"steps: {report.steps} (warmup {report.warmup_steps})")
    print(f"loss: initial {report.initial_loss:.6f}, final {report.final_loss:.6f} "
          f"({report.final_loss / report.initial_loss:.3f}x)")
    print(f"wrote {args.output}")
    return 0


def cmd_pipeline(args) -> int:
    rc_small = load_run_config(args.run_config)
    tgt_cfg = load_cos_config(args.tgt_config)
    plan = plan_scale(rc_small.model, tgt_cfg)
    rc_large = RunConfig(
        model=tgt_cfg,
        seed=rc_small.seed,
        steps=args.finetune_steps or rc_small.steps,
        batch_size=rc_small.batch_size,
        optimizer=rc_small.optimizer,
        task_seed=rc_small.resolve_task_seed(),
    )
    params, report = pipeline_pretrain_scale_finetune(rc_small, plan, rc_large)
    if args.output:
        save_bridge(_prepare_output(args.output), params)
    print(f"token ratio: {report.token_ratio:.4f}")
    print(f"stage 1: {report.stage1.initial_loss:.6f} -> {report.stage1.final_loss:.6f} "
          f"({report.stage1.steps} steps)")
    print(f"stage 2: {report.stage2.initial_loss:.6f} -> {report.stage2.final_loss:.6f} "
          f"({report.stage2.steps} steps)")
    print(f"preservation: {'ok' if report.preservation_passed else 'FAILED'} "
          f"(max deviation {report.preservation_max_deviation:.2e})")
    if args.output:
        print(f"wrote {args.output}")
    improved = report.stage2.final_loss <= report.stage1.final_loss
    print(f"post-migration final below pre-migration final: {'yes' if improved else 'NO'}")
    return 0 if (report.preservation_passed and improved) else 1


def cmd_gradcheck(args) -> int:
    cfg = load_cos_config(args.config)
    params = init_bridge(cfg, np.random.default_rng(args.seed))
    rng = np.random.default_rng(args.seed + 1)
    stack = _synthetic_stack_for(cfg, args.seed + 2)
    target = Tensor(rng.normal(size=(token_count(cfg), cfg.out_dim)))

    def loss():
        return mse(forward(cfg, params, stack).tokens, target)

    report = grad_check(loss, params.named_tensors(), tol=args.tol)
    n_entries = sum(e.n_entries for e in report.entries)
    print(f"checked {n_entries} parameter entries in {len(report.entries)} tensors")
    print(f"max relative error {report.max_rel_error:.3e} "
          f"(worst: {report.worst_param}, tolerance {report.tol:.0e})")
    print("PASS" if report.passed else "FAIL")
    return 0 if report.passed else 1


def _read_calibration(path: str) -> list[tuple[float, float]]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError:
                continue  # header line
    if len(rows) < 2:
        raise SchemaError(f"{path}: need at least 2 numeric (tokens, relative) rows")
    return rows


def cmd_cost(args) -> int:
    observations = _read_calibration(args.fit) if args.fit else DEFAULT_ANCHORS
    fit = fit_cost_params(observations)
    configs = [(path, load_cos_config(path)) for path in args.configs]
    reference = configs[0][1]
    print(f"fitted: step = {fit.params.fixed_step_cost:.6f} "
          f"+ {fit.params.per_token_cost:.6f} x (visual + {fit.params.text_len:.2f} text) tokens "
          f"[max residual {fit.max_abs_residual:.2e}]")
    header = ("config", "tokens", "step_time", "walltime", "relative")
    rows = []
    for path, cfg in configs:
        est = walltime(fit.params, cfg, reference=reference)
        rows.append((Path(path).name, token_count(cfg), est.step_time, est.walltime, est.relative))
    widths = [max(len(header[0]), *(len(r[0]) for r in rows)), 8, 10, 14, 9]
    print(f"{header[0]:<{widths[0]}} {header[1]:>8} {header[2]:>10} {header[3]:>14} {header[4]:>9}")
    for name, tokens, step, wall, rel in rows:
        print(f"{name:<{widths[0]}} {tokens:>8} {step:>10.6f} {wall:>14.1f} {rel:>9.4f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for name, tokens, step, wall, rel in rows:
                writer.writerow([name, tokens, f"{step:.6f}", f"{wall:.3f}", f"{rel:.6f}"])
        print(f"wrote {args.csv}")
    return 0


def cmd_props(args) -> int:
    report = run_properties(args.suites or None)
    for r in report.results:
        mark = "PASS" if r.passed else "FAIL"
        print(f"{mark} {r.suite}.{r.name}: {r.detail} ({r.seconds:.2f}s)")
    good, total = report.counts
    print(f"{good}/{total} properties passed in {report.seconds:.1f}s")
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cos",
        description="Multi-scale windowed token bridge: counting, scaling, "
                    "training, and cost tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tokens", help="print the token count of a config")
    p.add_argument("config")
    p.set_defaults(fn=cmd_tokens)

    p = sub.add_parser("validate", help="check a config against every invariant")
    p.add_argument("config")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("forward", help="run a checkpoint on synthetic features")
    p.add_argument("config")
    p.add_argument("checkpoint")
    p.add_argument("--synthetic-seed", type=int, default=0)
    p.set_defaults(fn=cmd_forward)

    p = sub.add_parser("scale", help="migrate a checkpoint onto a larger config")
    p.add_argument("src_checkpoint")
    p.add_argument("src_config")
    p.add_argument("tgt_config")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_scale)

    p = sub.add_parser("train", help="train on the synthetic task, save a checkpoint")
    p.add_argument("run_config")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("pipeline", help="pre-train small, migrate, fine-tune large")
    p.add_argument("run_config")
    p.add_argument("tgt_config")
    p.add_argument("-o", "--output")
    p.add_argument("--finetune-steps", type=int,
                   help="stage-2 step budget (default: same as stage 1)")
    p.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full bridge")
    p.add_argument("config")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("cost", help="price configs; first config is the reference")
    p.add_argument("configs", nargs="+")
    p.add_argument("--fit", help="CSV of (tokens, relative walltime) calibration rows")
    p.add_argument("--csv", help="also write the table to this CSV file")
    p.set_defaults(fn=cmd_cost)

    p = sub.add_parser("props", help="run invariant suites")
    p.add_argument("suites", nargs="*", metavar="suite",
                   help=f"one of: {', '.join(sorted(SUITES))} (default: all)")
    p.set_defaults(fn=cmd_props)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except _EXPECTED_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
