"""Error and calibration metrics."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInput, ShapeError


def relative_l2(pred, ref) -> float:
    """``||pred - ref|| / ||ref||`` over all entries."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ShapeError(f"prediction {pred.shape} and reference {ref.shape} differ")
    den = np.linalg.norm(ref)
    if den == 0:
        raise InvalidInput("relative error is undefined for a zero reference")
    return float(np.linalg.norm(pred - ref) / den)


def coverage(mean, std, ref) -> float:
    """Share of points with ``|mean - ref| <= 2 std``."""
    mean, std, ref = (np.asarray(a, dtype=np.float64) for a in (mean, std, ref))
    if not mean.shape == std.shape == ref.shape:
        raise ShapeError("mean, std and reference must share a shape")
    if mean.size == 0:
        raise InvalidInput("coverage needs at least one point")
    return float(np.mean(np.abs(mean - ref) <= 2.0 * std))
