"""Reconstruction quality metrics."""

from __future__ import annotations

import numpy as np

from .linops import LinearOperator

PSNR_CAP = 99.0


def psnr(x, x_hat, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 dB for near-exact matches."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"psnr: shape mismatch {x.shape} vs {x_hat.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((x - x_hat) ** 2))
    if mse < peak ** 2 * 10 ** (-PSNR_CAP / 10):
        return PSNR_CAP
    return float(10 * np.log10(peak ** 2 / mse))


def mean_psnr(x, x_hat, peak: float = 1.0) -> float:
    """Average of per-sample PSNR over the leading axis."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"psnr: shape mismatch {x.shape} vs {x_hat.shape}")
    return float(np.mean([psnr(a, b, peak) for a, b in zip(x, x_hat)]))


def nullspace_error(A: LinearOperator, x, x_hat) -> tuple[float, float]:
    """Split ``||x_hat - x||^2`` into row-space and nullspace parts.

    For a batch ``(B, n)`` the squared norms are averaged over samples.
    """
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"nullspace_error: shape mismatch {x.shape} vs {x_hat.shape}")
    e = x_hat - x
    pe = A.pinv_apply(A.apply(e))
    ne = e - pe
    if e.ndim == 1:
        return float(pe @ pe), float(ne @ ne)
    return float(np.mean(np.sum(pe ** 2, axis=-1))), float(np.mean(np.sum(ne ** 2, axis=-1)))
