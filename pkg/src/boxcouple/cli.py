"""Command-line surface: encode, postprocess, eval, synth, and bench.

Exit codes: 0 on success, 1 on usage errors ("usage error:" on stderr),
2 on data errors ("data error:" on stderr). BDC_THREADS caps the worker
pool used to post-process images concurrently.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .evaluation import (
    DetectionRecord,
    SynthConfig,
    evaluate_detections,
    synth_scene,
)
from .formats import (
    DataFormatError,
    detection_line,
    ground_truth_line,
    load_detections,
    load_ground_truths,
    read_heatmap,
    write_heatmap,
)
from .heatmap import GaussianConfig, encode_corner_heatmaps
from .postprocess import BdcConfig, Detection, bdc_pipeline, config_from_options, nms_pipeline

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

BENCH_RATIO_CEILING = 4.0 * 1.25  # doubling n may at most 4x the time, plus 25% slack


class UsageError(Exception):
    """Bad flags or option values; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags by default; route through
    # UsageError instead so the exit-code contract holds
    def error(self, message):
        raise UsageError(message)


def _worker_count() -> int:
    raw = os.environ.get("BDC_THREADS", "").strip()
    if not raw:
        return min(8, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"BDC_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"BDC_THREADS must be a positive integer, got {raw!r}")
    return n


def _add_bdc_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iou-thr", type=float, default=0.5, help="NMS overlap threshold")
    p.add_argument(
        "--cocl",
        default="exp-avg",
        help="score fusion: exp-avg, exp-max, exp-min, or weighted[:alpha]",
    )
    p.add_argument(
        "--couple",
        default="top-n",
        choices=["max", "top-n", "all", "threshold"],
        help="corner candidate selection strategy",
    )
    p.add_argument("--topn", type=int, default=10, help="candidates kept by top-n")
    p.add_argument("--theta", type=float, default=0.5, help="threshold strategy cutoff")
    p.add_argument(
        "--adaptive",
        action="store_true",
        help="derive the threshold cutoff as mean + std of the candidate scores",
    )
    p.add_argument("--score-floor", type=float, default=0.05, help="drop detections below this score")
    p.add_argument("--max-per-image", type=int, default=100, help="cap on emitted boxes per image")
    p.add_argument(
        "--rank-by",
        default="cocl",
        choices=["cocl", "cls"],
        help="rank detections by the fused score or the raw classifier score",
    )


def _config_from_args(args) -> BdcConfig:
    try:
        return config_from_options(
            {
                "iou_thr": args.iou_thr,
                "cocl": args.cocl,
                "couple": args.couple,
                "topn": args.topn,
                "theta": args.theta,
                "adaptive": args.adaptive,
                "score_floor": args.score_floor,
                "max_per_image": args.max_per_image,
                "rank_by": args.rank_by,
            }
        )
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_encode(args) -> int:
    gts = load_ground_truths(args.gts)
    dims = (args.classes, args.grid_height, args.grid_width)
    try:
        gaussian = GaussianConfig(min_overlap=args.min_overlap, sigma_divisor=args.sigma_divisor)
        if args.stride <= 0:
            raise ValueError(f"stride must be positive, got {args.stride}")
        if min(dims) < 1:
            raise ValueError(f"heatmap dims must be positive, got {dims}")
    except ValueError as e:
        raise UsageError(str(e)) from None
    for g in gts:
        if g.cls >= args.classes:
            raise DataFormatError(
                f"{args.gts}:{g.line}: class id {g.cls} outside [0, {args.classes})"
            )
    by_image: dict[str, list] = {}
    for g in gts:
        by_image.setdefault(g.image_id, []).append(g)
    ids = sorted(set(by_image) | set(args.image_ids.split(",") if args.image_ids else []))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for image_id in ids:
        rows = by_image.get(image_id, [])
        hm = encode_corner_heatmaps(
            [(g.cls, g.box) for g in rows], dims, args.stride, gaussian
        )
        write_heatmap(out_dir / f"{image_id}.chm", hm)
    print(f"encode: wrote {len(ids)} heatmap(s) to {out_dir}")
    return EXIT_OK


def cmd_postprocess(args) -> int:
    workers = _worker_count()
    config = _config_from_args(args)
    records = load_detections(args.dets)
    heatmap_dir = Path(args.heatmaps)
    by_image: dict[str, list[DetectionRecord]] = {}
    for rec in records:
        by_image.setdefault(rec.image_id, []).append(rec)

    def run_image(image_id: str) -> list[DetectionRecord]:
        recs = by_image[image_id]
        hm_path = heatmap_dir / f"{image_id}.chm"
        if hm_path.exists():
            hm = read_heatmap(hm_path)
        elif args.fallback_nms:
            hm = None
        else:
            raise DataFormatError(f"missing heatmap for image {image_id}: {hm_path}")
        dets = []
        for rec in recs:
            if rec.score > 1.0:
                raise DataFormatError(
                    f"{args.dets}:{rec.line}: score {rec.score} outside [0, 1]"
                )
            if hm is not None and rec.cls >= hm.num_classes:
                raise DataFormatError(
                    f"{args.dets}:{rec.line}: class id {rec.cls} outside heatmap"
                    f" with {hm.num_classes} channel(s)"
                )
            try:
                dets.append(Detection(rec.cls, rec.score, rec.box))
            except ValueError as e:
                raise DataFormatError(f"{args.dets}:{rec.line}: {e}") from None
        if hm is None:
            # no corner evidence; rank by the raw score and keep boxes as-is
            pairs = nms_pipeline(dets, None, replace(config, rank_by="cls"))
        else:
            pairs = bdc_pipeline(dets, hm, config)
        return [DetectionRecord(image_id, d.cls, score, d.box) for d, score in pairs]

    ids = sorted(by_image)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        per_image = list(pool.map(run_image, ids))
    out_rows = [row for rows in per_image for row in rows]
    with open(args.out, "w", encoding="utf-8") as f:
        for row in out_rows:
            f.write(detection_line(row) + "\n")
    print(
        f"postprocess: {len(ids)} image(s), {len(records)} detection(s) in,"
        f" {len(out_rows)} out -> {args.out}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    gts = load_ground_truths(args.gts)
    dets = load_detections(args.dets)
    report = evaluate_detections(gts, dets)
    payload = report.to_dict()
    for key, value in payload.items():
        if isinstance(value, float):
            print(f"{key:>17} {value:.6f}")
        else:
            print(f"{key:>17} {value}")
    if args.json:
        Path(args.json).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def _synth_config(args, seed: int) -> SynthConfig:
    try:
        return SynthConfig(
            seed=seed,
            image_size=args.image_size,
            classes=args.classes,
            objects=args.objects,
            duplicates=args.duplicates,
            jitter_sigma=args.jitter,
            heatmap_noise=args.noise,
            stride=args.stride,
        )
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_synth(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_gts = n_dets = 0
    with open(out_dir / "gts.jsonl", "w", encoding="utf-8") as gt_file, open(
        out_dir / "dets.jsonl", "w", encoding="utf-8"
    ) as det_file:
        for i in range(args.images):
            scene = synth_scene(_synth_config(args, args.seed + i), image_id=f"{i:06d}")
            for g in scene.gts:
                gt_file.write(ground_truth_line(g) + "\n")
            for d in scene.dets:
                det_file.write(
                    detection_line(DetectionRecord(scene.image_id, d.cls, d.score, d.box)) + "\n"
                )
            write_heatmap(out_dir / f"{scene.image_id}.chm", scene.heatmap)
            n_gts += len(scene.gts)
            n_dets += len(scene.dets)
    print(
        f"synth: {args.images} image(s), {n_gts} ground truth(s), {n_dets} detection(s)"
        f" -> {out_dir}"
    )
    return EXIT_OK


def _bench_scene(n_boxes: int, seed: int):
    objects = min(50, n_boxes)
    duplicates = max(1, round(n_boxes / objects))
    config = SynthConfig(
        seed=seed,
        image_size=2048,
        classes=3,
        objects=objects,
        duplicates=duplicates,
        stride=8.0,
        min_size=64.0,
        max_size=256.0,
    )
    return synth_scene(config)


def _time_call(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cmd_bench(args) -> int:
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
        if not sizes or min(sizes) < 1:
            raise ValueError
    except ValueError:
        raise UsageError(f"--sizes must be comma-separated positive integers, got {args.sizes!r}") from None
    config = BdcConfig()
    nms_config = BdcConfig(rank_by="cls")
    rows = []
    failed = False
    for n in sizes:
        base = _bench_scene(n, args.seed)
        doubled = _bench_scene(2 * n, args.seed + 1)
        entry = {"n": len(base.dets), "n2": len(doubled.dets)}
        for label, fn in (
            ("nms", lambda s: nms_pipeline(list(s.dets), None, nms_config)),
            ("bdc", lambda s: bdc_pipeline(list(s.dets), s.heatmap, config)),
        ):
            t1 = _time_call(lambda: fn(base), args.repeats)
            t2 = _time_call(lambda: fn(doubled), args.repeats)
            ratio = t2 / t1 if t1 > 0 else float("inf")
            entry[f"{label}_s"] = t1
            entry[f"{label}_boxes_per_s"] = entry["n"] / t1 if t1 > 0 else float("inf")
            entry[f"{label}_doubling_ratio"] = ratio
            if ratio > BENCH_RATIO_CEILING:
                failed = True
        entry["bdc_nms_ratio"] = entry["bdc_s"] / entry["nms_s"] if entry["nms_s"] > 0 else float("inf")
        rows.append(entry)
        print(
            "bench: n={n} nms_s={nms_s:.4f} bdc_s={bdc_s:.4f}"
            " nms_boxes_per_s={nms_boxes_per_s:.0f} bdc_boxes_per_s={bdc_boxes_per_s:.0f}"
            " bdc_nms_ratio={bdc_nms_ratio:.2f}"
            " nms_doubling_ratio={nms_doubling_ratio:.2f}"
            " bdc_doubling_ratio={bdc_doubling_ratio:.2f}".format(**entry)
        )
    if args.json:
        Path(args.json).write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    if failed:
        print(
            f"data error: doubling ratio exceeded the quadratic ceiling {BENCH_RATIO_CEILING}",
            file=sys.stderr,
        )
        return EXIT_DATA
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="boxcouple", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("encode", help="render ground truths into corner heatmap files")
    p.add_argument("--gts", required=True, help="ground-truth JSON-lines file")
    p.add_argument("--out-dir", required=True, help="directory for <image_id>.chm files")
    p.add_argument("--classes", type=int, required=True, help="number of class channels")
    p.add_argument("--grid-height", type=int, required=True)
    p.add_argument("--grid-width", type=int, required=True)
    p.add_argument("--stride", type=float, default=8.0, help="image pixels per grid cell")
    p.add_argument("--min-overlap", type=float, default=0.3, help="radius rule IoU floor")
    p.add_argument("--sigma-divisor", type=float, default=6.0, help="splat diameter to sigma")
    p.add_argument(
        "--image-ids",
        default="",
        help="comma-separated ids to emit even without ground truths (zero-filled)",
    )
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("postprocess", help="re-couple detection boxes on corner heatmaps")
    p.add_argument("--dets", required=True, help="detections JSON-lines file")
    p.add_argument("--heatmaps", required=True, help="directory of <image_id>.chm files")
    p.add_argument("--out", required=True, help="output detections JSON-lines file")
    p.add_argument(
        "--fallback-nms",
        action="store_true",
        help="images without a heatmap fall back to plain NMS instead of failing",
    )
    _add_bdc_flags(p)
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("eval", help="COCO-style AP of detections against ground truths")
    p.add_argument("--gts", required=True)
    p.add_argument("--dets", required=True)
    p.add_argument("--json", default="", help="also write the report to this JSON file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate synthetic scenes with heatmaps")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--images", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=512)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--objects", type=int, default=6)
    p.add_argument("--duplicates", type=int, default=16)
    p.add_argument("--jitter", type=float, default=4.0, help="corner jitter sigma in pixels")
    p.add_argument("--noise", type=float, default=0.0, help="heatmap noise sigma")
    p.add_argument("--stride", type=float, default=4.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="box throughput and scaling of the two pipelines")
    p.add_argument("--sizes", default="1000,10000,100000", help="comma-separated box counts")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", default="", help="also write rows to this JSON file")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataFormatError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


def entrypoint() -> None:
    sys.exit(main())
