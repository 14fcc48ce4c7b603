"""PSNR metrics for unit-range radiance images, including the worst-percentile
variant that scores only the hardest pixels."""
from __future__ import annotations

import math

import numpy as np

PSNR_CAP = 100.0


def _pixel_sq_error(image: np.ndarray, reference: np.ndarray) -> np.ndarray:
    a = np.asarray(image, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    sq = d * d
    if sq.ndim == 3:
        sq = sq.mean(axis=-1)
    return sq


def psnr(image: np.ndarray, reference: np.ndarray, cap: float = PSNR_CAP) -> float:
    """10 log10(1 / MSE) for images in [0, 1]; identical images hit the cap."""
    mse = float(np.mean(_pixel_sq_error(image, reference)))
    if mse <= 0.0:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / mse))


def worst_percentile_psnr(image: np.ndarray, reference: np.ndarray, p: float,
                          cap: float = PSNR_CAP) -> float:
    """PSNR over the ceil(p%) of pixels with the largest squared error.

    Ties resolve in row-major order so the selection is deterministic.
    p = 100 recovers plain psnr.
    """
    if not (0.0 < p <= 100.0):
        raise ValueError("p must be in (0, 100]")
    sq = _pixel_sq_error(image, reference).ravel()
    n_sel = max(1, math.ceil(p / 100.0 * sq.size))
    order = np.argsort(-sq, kind="stable")
    mse = float(np.mean(sq[order[:n_sel]]))
    if mse <= 0.0:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / mse))


def foreground_psnr(image: np.ndarray, reference: np.ndarray, mask: np.ndarray,
                    cap: float = PSNR_CAP) -> float:
    """PSNR restricted to pixels where mask is True."""
    sq = _pixel_sq_error(image, reference)
    if mask.shape != sq.shape:
        raise ValueError("mask must match image resolution")
    if not np.any(mask):
        raise ValueError("empty foreground mask")
    mse = float(sq[mask].mean())
    if mse <= 0.0:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / mse))
