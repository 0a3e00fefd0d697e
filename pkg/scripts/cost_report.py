"""Fit the pre-training cost model and print the full token-budget table.

Fits step time as an affine function of total sequence length (visual plus
text tokens) from published relative-walltime anchors, checks the fit
against the held-out budgets, and tabulates predicted walltimes for every
configuration in the ladder relative to the 336-token default.

Usage:
    python3 scripts/cost_report.py
    python3 scripts/cost_report.py --calibration configs/calibration.csv
"""

import argparse
import csv

from cos.cost_model import fit_cost_params, step_time, walltime
from cos.presets import PRETRAIN, SCALE_PAIRS, TARGETS, ladder


def read_anchors(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    return [(float(t), float(rel)) for t, rel in rows[1:]]  # skip header


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--calibration", default="configs/calibration.csv")
    args = ap.parse_args()

    anchors = read_anchors(args.calibration)
    fit = fit_cost_params(anchors)
    p = fit.params
    print(f"anchors: {anchors}")
    print(f"step = {p.fixed_step_cost:.6f} + {p.per_token_cost:.6f} x "
          f"(visual + {p.text_len:.2f} text) tokens")
    print(f"max fit residual: {fit.max_abs_residual:.2e}")
    for held_out in (48, 80):
        print(f"held-out check, {held_out} visual tokens: "
              f"relative step time {step_time(p, held_out):.4f}")

    reference = TARGETS[336]
    print()
    print(f"{'config':<16} {'tokens':>6} {'rel step':>9} {'rel walltime':>13}")
    for name, cfg, tokens in ladder():
        est = walltime(p, cfg, reference=reference)
        print(f"{name:<16} {tokens:>6} {est.step_time:>9.4f} {est.relative:>13.4f}")

    print()
    headline = walltime(p, PRETRAIN[32], reference=reference)
    print(f"pre-train at 32 instead of 336 tokens: "
          f"{1 - headline.relative:.0%} walltime saved")
    for src_n, tgt_n in SCALE_PAIRS:
        src_est = walltime(p, PRETRAIN[src_n], reference=TARGETS[tgt_n])
        print(f"pre-train at {src_n:>2} instead of {tgt_n:>4} tokens: "
              f"{1 - src_est.relative:.0%} walltime saved")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
