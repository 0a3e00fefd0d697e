"""Pre-train a small-budget bridge, scale it up, and fine-tune the result.

Runs the full desk-scale pipeline on synthetic data: stage 1 trains a
low-token configuration, the scaling planner maps it onto a high-token
configuration (inflating parameters where a new scale appears), and stage 2
continues training at the larger budget. Prints loss curves, the functional
preservation report at the handoff, and writes the final checkpoint.

Usage:
    python3 scripts/run_pipeline.py                      # 80 -> 336 tokens
    python3 scripts/run_pipeline.py --source 32 --target 528 --steps 200
"""

import argparse
from pathlib import Path

from cos.checkpoint import save_bridge
from cos.configs import OptimizerConfig, RunConfig
from cos.presets import PRETRAIN, TARGETS
from cos.scaling import functional_preservation_check, migrate_params, plan_scale
from cos.training import train_toy


def summarize(tag, report):
    losses = report.losses
    marks = [0, len(losses) // 4, len(losses) // 2, 3 * len(losses) // 4]
    trace = "  ".join(f"{losses[i]:.4f}@{i}" for i in marks)
    print(f"[{tag}] {report.steps} steps  loss {trace}  final {report.final_loss:.4f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--source", type=int, default=80, choices=sorted(PRETRAIN),
                    help="pre-train token budget")
    ap.add_argument("--target", type=int, default=336, choices=sorted(TARGETS),
                    help="fine-tune token budget")
    ap.add_argument("--steps", type=int, default=150, help="pre-train steps")
    ap.add_argument("--finetune-steps", type=int, default=300)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--out", type=Path, default=Path("runs"))
    args = ap.parse_args()

    src_cfg, tgt_cfg = PRETRAIN[args.source], TARGETS[args.target]
    plan = plan_scale(src_cfg, tgt_cfg)
    print(f"plan: {args.source} -> {args.target} tokens "
          f"(ratio {plan.token_ratio:.4f}), "
          f"{sum(e.inherit for e in plan.scale_map)}/{len(plan.scale_map)} scales inherited")

    opt = OptimizerConfig(learning_rate=args.lr)
    rc_small = RunConfig(model=src_cfg, seed=args.seed, steps=args.steps,
                         batch_size=1, optimizer=opt)
    rc_large = RunConfig(model=tgt_cfg, seed=args.seed, steps=args.finetune_steps,
                         batch_size=1, optimizer=opt,
                         task_seed=rc_small.resolve_task_seed())

    small_params, stage1 = train_toy(rc_small)
    summarize("pretrain", stage1)

    migrated = migrate_params(small_params, plan)
    preservation = functional_preservation_check(small_params, migrated, plan)
    print("preservation at handoff:")
    for entry in preservation.entries:
        dev = "n/a" if entry.kind == "approximate init" else f"{entry.max_deviation:.2e}"
        print(f"  scale {entry.scale_index}: {entry.kind:<16} max deviation {dev}")

    large_params, stage2 = train_toy(rc_large, params=migrated)
    summarize("finetune", stage2)

    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"bridge_{args.target}.ckpt"
    save_bridge(path, large_params)
    print(f"saved fine-tuned parameters to {path}")
    ok = preservation.passed and stage2.final_loss <= stage1.final_loss
    print("pipeline", "OK" if ok else "DEGRADED")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
