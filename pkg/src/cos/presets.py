"""Published token-scaling ladder and the pre-train/fine-tune config pairs.

Window layouts and per-window query counts follow the published ablation
ladder: every scale keeps 16 queries except the finest, which keeps 4 (2 in
the 48-token budget). Channel and width hyperparameters here are desk-scale
stand-ins so the full system runs in seconds on a CPU; token arithmetic is
independent of them.
"""

from __future__ import annotations

from cos.assembly import CosConfig, ScaleSpec

PATCH = 14

# desk-scale model dims, shared by every preset
DESK_DIMS = dict(channels=8, model_dim=32, heads=4, levels=1, out_dim=16)


def make_config(resolution: int, scales: list[tuple[int, int]], **overrides) -> CosConfig:
    patch = overrides.pop("patch_size", PATCH)
    dims = {**DESK_DIMS, **overrides}
    return CosConfig(
        resolution=resolution,
        patch_size=patch,
        scales=tuple(ScaleSpec(w, n) for w, n in scales),
        **dims,
    )


# (name, resolution, [(window, queries per window)...], expected total tokens)
LADDER_ROWS: list[tuple[str, int, list[tuple[int, int]], int]] = [
    ("baseline_224", 224, [(16, 16), (4, 4)], 80),
    ("baseline_448", 448, [(32, 16), (8, 4)], 80),
    ("win_global_144", 224, [(16, 16), (8, 16), (4, 4)], 144),
    ("win_local_272", 224, [(16, 16), (2, 4)], 272),
    ("win_both_336", 224, [(16, 16), (8, 16), (2, 4)], 336),
    ("res_global_144", 448, [(32, 16), (16, 16), (8, 4)], 144),
    ("res_local_272", 448, [(32, 16), (4, 4)], 272),
    ("res_both_336", 448, [(32, 16), (16, 16), (4, 4)], 336),
    ("com_global_528", 448, [(32, 16), (8, 16), (4, 4)], 528),
    ("com_local_1104", 448, [(32, 16), (16, 16), (2, 4)], 1104),
    ("com_both_1296", 448, [(32, 16), (8, 16), (2, 4)], 1296),
]


def ladder() -> list[tuple[str, CosConfig, int]]:
    return [(name, make_config(res, scales), total) for name, res, scales, total in LADDER_ROWS]


# pre-training budgets and the fine-tune targets each one scales up to
PRETRAIN = {
    32: make_config(224, [(16, 16), (8, 4)]),
    48: make_config(224, [(16, 16), (4, 2)]),
    80: make_config(224, [(16, 16), (4, 4)]),
}

TARGETS = {
    336: make_config(448, [(32, 16), (16, 16), (4, 4)]),
    528: make_config(448, [(32, 16), (8, 16), (4, 4)]),
    784: make_config(448, [(32, 16), (8, 16), (2, 2)]),
    1296: make_config(448, [(32, 16), (8, 16), (2, 4)]),
}

SCALE_PAIRS = [(32, 528), (48, 784), (80, 1296)]

# tiny config for end-to-end gradient checking: ~2.4k parameters
GRADCHECK_TOY = make_config(
    56,
    [(4, 4), (2, 1)],
    channels=6,
    model_dim=8,
    heads=2,
    levels=2,
    out_dim=3,
)
