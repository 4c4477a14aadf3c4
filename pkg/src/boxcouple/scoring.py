"""Fused ranking scores joining classification confidence with corner confidence."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

VARIANT_KINDS = ("exp_avg", "exp_max", "exp_min", "weighted")


@dataclass(frozen=True)
class CoclVariant:
    """Score fusion family.

    The exp_* kinds multiply the classification score by e raised to a
    statistic of the two corner confidences (their mean, max, or min); the
    weighted kind is the geometric blend s^alpha * mean^(1 - alpha), where
    alpha = 1 ignores the corners and alpha = 0 ignores the classifier.
    alpha only applies to the weighted kind.
    """

    kind: str = "exp_avg"
    alpha: float = 0.3

    def __post_init__(self):
        if self.kind not in VARIANT_KINDS:
            raise ValueError(f"kind must be one of {VARIANT_KINDS}, got {self.kind!r}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


def _check_unit(name: str, value: float) -> float:
    value = float(value)
    if not (math.isfinite(value) and 0.0 <= value <= 1.0):
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value


def cocl(s_cls: float, f_tl: float, f_br: float, variant: CoclVariant = CoclVariant()) -> float:
    """Fused corner-classification score for one detection.

    All inputs lie in [0, 1]. The result is non-negative and can exceed 1
    for the exp_* kinds (by at most a factor of e); downstream consumers
    must treat it as a ranking score, not a probability. 0^0 is taken as 1
    in the weighted kind, so degenerate inputs stay total.
    """
    s = _check_unit("s_cls", s_cls)
    tl = _check_unit("f_tl", f_tl)
    br = _check_unit("f_br", f_br)
    # np.exp rather than math.exp so scalar and vectorized results agree
    # to the bit (the two libraries round the last ulp differently)
    if variant.kind == "exp_avg":
        return s * float(np.exp((tl + br) / 2.0))
    if variant.kind == "exp_max":
        return s * float(np.exp(max(tl, br)))
    if variant.kind == "exp_min":
        return s * float(np.exp(min(tl, br)))
    # weighted: s^alpha * mean^(1 - alpha); numpy's 0.0 ** 0.0 == 1.0
    avg = (tl + br) / 2.0
    return float(np.power(s, variant.alpha) * np.power(avg, 1.0 - variant.alpha))


def cocl_many(
    s_cls: np.ndarray, f_tl: np.ndarray, f_br: np.ndarray, variant: CoclVariant = CoclVariant()
) -> np.ndarray:
    """Vectorized cocl over aligned 1-D arrays; returns float64."""
    s = np.asarray(s_cls, dtype=np.float64)
    tl = np.asarray(f_tl, dtype=np.float64)
    br = np.asarray(f_br, dtype=np.float64)
    if not (s.shape == tl.shape == br.shape):
        raise ValueError(f"shape mismatch: {s.shape}, {tl.shape}, {br.shape}")
    for name, arr in (("s_cls", s), ("f_tl", tl), ("f_br", br)):
        if arr.size and not ((arr >= 0.0) & (arr <= 1.0)).all():
            raise ValueError(f"{name} has values outside [0, 1]")
    if variant.kind == "exp_avg":
        return s * np.exp((tl + br) / 2.0)
    if variant.kind == "exp_max":
        return s * np.exp(np.maximum(tl, br))
    if variant.kind == "exp_min":
        return s * np.exp(np.minimum(tl, br))
    avg = (tl + br) / 2.0
    # numpy matches python here: 0.0 ** 0.0 == 1.0
    return s**variant.alpha * avg ** (1.0 - variant.alpha)


def parse_variant(text: str) -> CoclVariant:
    """Parse a variant spelling like "exp-avg" or "weighted:0.3"."""
    name, sep, arg = text.partition(":")
    kind = name.strip().replace("-", "_")
    if kind != "weighted":
        if sep:
            raise ValueError(f"only the weighted variant takes an argument, got {text!r}")
        return CoclVariant(kind=kind)
    alpha = 0.3
    if sep:
        try:
            alpha = float(arg)
        except ValueError:
            raise ValueError(f"bad weighted alpha {arg!r}") from None
    return CoclVariant(kind="weighted", alpha=alpha)


def format_variant(variant: CoclVariant) -> str:
    """Inverse of parse_variant."""
    if variant.kind == "weighted":
        return f"weighted:{variant.alpha:g}"
    return variant.kind.replace("_", "-")
