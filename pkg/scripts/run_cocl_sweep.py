"""Sweep score-fusion variants on the synthetic benchmark.

Holds the coupling strategy fixed (top-n) and swaps the fused ranking
score: the exponential average/max/min kinds and the geometric blend at
several alphas, plus coupling ranked by the raw classifier score, all
against the plain-NMS baseline.

Usage:
    python3 scripts/run_cocl_sweep.py [--scenes 200] [--seed 1000] [--jitter 4.0]
"""

import argparse

from boxcouple import BdcConfig, CoclVariant, SynthConfig, compare_strategies, make_scenes

VARIANTS = {
    "exp-avg": CoclVariant(kind="exp_avg"),
    "exp-max": CoclVariant(kind="exp_max"),
    "exp-min": CoclVariant(kind="exp_min"),
    "weighted:0.3": CoclVariant(kind="weighted", alpha=0.3),
    "weighted:0.5": CoclVariant(kind="weighted", alpha=0.5),
    "weighted:0.7": CoclVariant(kind="weighted", alpha=0.7),
    "raw-cls": None,
}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scenes", type=int, default=200)
    parser.add_argument("--seed", type=int, default=1000)
    parser.add_argument("--jitter", type=float, default=4.0)
    args = parser.parse_args()

    scenes = make_scenes(args.scenes, SynthConfig(seed=args.seed, jitter_sigma=args.jitter))
    configs = {
        name: BdcConfig(rank_by="cls") if variant is None else BdcConfig(cocl_variant=variant)
        for name, variant in VARIANTS.items()
    }
    reports = compare_strategies(scenes, configs)

    print(f"fusion sweep: {args.scenes} scenes, jitter {args.jitter} px, seed {args.seed}")
    print(f"{'ranking':>14} {'ap':>8} {'ap50':>8} {'ap75':>8} {'miou':>9}")
    for name in ("nms", *VARIANTS):
        r = reports[name]
        print(f"{name:>14} {r.ap:8.4f} {r.ap50:8.4f} {r.ap75:8.4f} {r.mean_matched_iou:9.5f}")


if __name__ == "__main__":
    main()
