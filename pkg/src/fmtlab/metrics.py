from __future__ import annotations

import math

import numpy as np

from .errors import DataError, ShapeError


def measure_qsnr(original, quantized) -> float:
    """QSNR in dB: ``-10 log10(||X - Xq||^2 / ||X||^2)``.

    Returns ``math.inf`` when the reconstruction is exact.
    """
    x = np.asarray(original, dtype=np.float64)
    xq = np.asarray(quantized, dtype=np.float64)
    if x.shape != xq.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {xq.shape}")
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    if peak == 0.0:
        raise DataError("QSNR is undefined for an all-zero signal")
    # normalise first so tiny or huge magnitudes do not under/overflow when squared
    x, xq = x / peak, xq / peak
    signal = float(np.sum(x * x))
    noise = float(np.sum((x - xq) ** 2))
    if noise == 0.0:
        return math.inf
    return -10.0 * math.log10(noise / signal)
