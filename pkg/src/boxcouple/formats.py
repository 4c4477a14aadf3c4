"""On-disk formats: JSON-lines box files and the binary corner-heatmap container.

Heatmap container layout (little-endian):

    magic   4 bytes  b"CHM1"
    version u32      1
    C, H, W u32 each
    stride  f32
    tl      C*H*W f32, C order
    br      C*H*W f32, C order

Total length is exactly 24 + 2*4*C*H*W bytes; payloads outside [0, 1] are
rejected on read.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .evaluation import DetectionRecord, GroundTruth
from .geometry import BBox
from .heatmap import CornerHeatmap

MAGIC = b"CHM1"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIf")

PathLike = Union[str, Path]


class DataFormatError(ValueError):
    """Malformed or inconsistent input data; maps to CLI exit code 2."""


def write_heatmap(path: PathLike, hm: CornerHeatmap) -> None:
    c, (h, w) = hm.num_classes, hm.grid_dims
    header = _HEADER.pack(MAGIC, VERSION, c, h, w, hm.stride)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(hm.tl, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(hm.br, dtype="<f4").tobytes())


def read_heatmap(path: PathLike) -> CornerHeatmap:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise DataFormatError(f"cannot read heatmap {path}: {e}") from None
    if len(blob) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, version, c, h, w, stride = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    if min(c, h, w) < 1:
        raise DataFormatError(f"{path}: empty dims (C={c}, H={h}, W={w})")
    if not (math.isfinite(stride) and stride > 0.0):
        raise DataFormatError(f"{path}: bad stride {stride}")
    n = c * h * w
    expected = _HEADER.size + 2 * 4 * n
    if len(blob) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    tl = np.frombuffer(blob, dtype="<f4", count=n, offset=_HEADER.size).reshape(c, h, w)
    br = np.frombuffer(blob, dtype="<f4", count=n, offset=_HEADER.size + 4 * n).reshape(c, h, w)
    try:
        return CornerHeatmap(tl, br, stride)
    except ValueError as e:
        raise DataFormatError(f"{path}: {e}") from None


def _row_error(path, lineno: int, message: str) -> DataFormatError:
    return DataFormatError(f"{path}:{lineno}: {message}")


def _parse_bbox(obj, path, lineno: int) -> BBox:
    if not (isinstance(obj, list) and len(obj) == 4):
        raise _row_error(path, lineno, f"bbox must be a list of 4 numbers, got {obj!r}")
    for v in obj:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise _row_error(path, lineno, f"bbox must be a list of 4 numbers, got {obj!r}")
    try:
        return BBox(*obj)
    except ValueError as e:
        raise _row_error(path, lineno, str(e)) from None


def _parse_row(text: str, path, lineno: int, keys: tuple[str, ...]) -> dict:
    try:
        row = json.loads(text)
    except json.JSONDecodeError as e:
        raise _row_error(path, lineno, f"invalid JSON: {e}") from None
    if not isinstance(row, dict):
        raise _row_error(path, lineno, f"row must be a JSON object, got {type(row).__name__}")
    missing = [k for k in keys if k not in row]
    if missing:
        raise _row_error(path, lineno, f"missing key(s) {missing}")
    return row


def _parse_common(row: dict, path, lineno: int) -> tuple[str, int, BBox]:
    image_id = row["image_id"]
    if isinstance(image_id, bool) or not isinstance(image_id, (str, int)):
        raise _row_error(path, lineno, f"image_id must be a string or integer, got {image_id!r}")
    cls = row["class"]
    if isinstance(cls, bool) or not isinstance(cls, int) or cls < 0:
        raise _row_error(path, lineno, f"class must be a non-negative integer, got {cls!r}")
    return str(image_id), cls, _parse_bbox(row["bbox"], path, lineno)


def _iter_lines(path: PathLike):
    try:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, raw in enumerate(f, start=1):
                line = raw.strip()
                if line:
                    yield lineno, line
    except OSError as e:
        raise DataFormatError(f"cannot read {path}: {e}") from None


def load_ground_truths(path: PathLike) -> list[GroundTruth]:
    """Parse a JSON-lines ground-truth file of {image_id, class, bbox} rows."""
    out = []
    for lineno, line in _iter_lines(path):
        row = _parse_row(line, path, lineno, ("image_id", "class", "bbox"))
        image_id, cls, box = _parse_common(row, path, lineno)
        try:
            out.append(GroundTruth(image_id, cls, box, line=lineno))
        except ValueError as e:
            raise _row_error(path, lineno, str(e)) from None
    return out


def load_detections(path: PathLike) -> list[DetectionRecord]:
    """Parse a JSON-lines detections file of {image_id, class, score, bbox} rows.

    Scores must be finite and non-negative; values above 1 are legal, since
    fused ranking scores can exceed 1.
    """
    out = []
    for lineno, line in _iter_lines(path):
        row = _parse_row(line, path, lineno, ("image_id", "class", "score", "bbox"))
        image_id, cls, box = _parse_common(row, path, lineno)
        score = row["score"]
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            raise _row_error(path, lineno, f"score must be a number, got {score!r}")
        try:
            out.append(DetectionRecord(image_id, cls, score, box, line=lineno))
        except ValueError as e:
            raise _row_error(path, lineno, str(e)) from None
    return out


def ground_truth_line(gt: GroundTruth) -> str:
    return json.dumps(
        {"image_id": gt.image_id, "class": gt.cls, "bbox": list(gt.box.as_tuple())}
    )


def detection_line(rec: DetectionRecord) -> str:
    return json.dumps(
        {
            "image_id": rec.image_id,
            "class": rec.cls,
            "score": rec.score,
            "bbox": list(rec.box.as_tuple()),
        }
    )


def write_ground_truths(path: PathLike, gts: Iterable[GroundTruth]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for gt in gts:
            f.write(ground_truth_line(gt) + "\n")


def write_detections(path: PathLike, recs: Iterable[DetectionRecord]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in recs:
            f.write(detection_line(rec) + "\n")
