"""GAP-TV reconstruction of coded video blocks.

Recovers the B frames behind one compressive measurement by alternating a
per-pixel projection onto the measurement constraint with a per-frame total
variation denoising step:

    r   = y - sum_k c_k * x_k
    x_k = x_k + c_k * r / max(R, eps)        with R = sum_k c_k^2
    x_k = tv_denoise(x_k, weight)

The projection drives the data residual to zero wherever at least one mask
is open; the TV step pulls each frame toward a piecewise-smooth image.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensors import CodingCube, Frame, VideoCube

__all__ = [
    "GapTvParams",
    "gap_tv_reconstruct",
    "tv_denoise",
    "total_variation",
    "coverage_map",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GapTvParams:
    """Solver knobs for gap_tv_reconstruct."""

    outer_iters: int = 60
    tv_weight: float = 0.07
    tv_inner_iters: int = 5
    epsilon_r: float = 1e-8

    def __post_init__(self):
        if self.outer_iters < 1:
            raise ValueError(f"outer_iters must be >= 1, got {self.outer_iters}")
        if self.tv_weight < 0:
            raise ValueError(f"tv_weight must be >= 0, got {self.tv_weight}")
        if self.tv_inner_iters < 1:
            raise ValueError(f"tv_inner_iters must be >= 1, got {self.tv_inner_iters}")
        if self.epsilon_r <= 0:
            raise ValueError(f"epsilon_r must be positive, got {self.epsilon_r}")


# ===== Total variation denoising =====


def _grad(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # forward differences, replicate border (gradient 0 at the far edge)
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, :-1] = img[:, 1:] - img[:, :-1]
    gy[:-1, :] = img[1:, :] - img[:-1, :]
    return gx, gy


def _div(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    # negative adjoint of _grad; px[:, -1] and py[-1, :] stay zero throughout
    d = np.zeros_like(px)
    d[:, 0] += px[:, 0]
    d[:, 1:] += px[:, 1:] - px[:, :-1]
    d[0, :] += py[0, :]
    d[1:, :] += py[1:, :] - py[:-1, :]
    return d


def total_variation(img) -> float:
    """Discrete isotropic total variation (forward differences, replicate border)."""
    arr = img.samples if isinstance(img, Frame) else np.asarray(img)
    gx, gy = _grad(arr.astype(np.float64))
    return float(np.hypot(gx, gy).sum())


def _tv_denoise(img: np.ndarray, weight: float, inner_iters: int) -> np.ndarray:
    """Proximal isotropic TV step solved in the dual with fixed step 0.25.

    Returns argmin_u 0.5*||u - img||^2 + weight * TV(u), approximated by
    inner_iters projected gradient iterations on the dual field.
    """
    if weight == 0.0:
        return img.copy()
    tau = 0.25
    px = np.zeros_like(img)
    py = np.zeros_like(img)
    scaled = img / weight
    for _ in range(inner_iters):
        gx, gy = _grad(_div(px, py) - scaled)
        denom = 1.0 + tau * np.hypot(gx, gy)
        px = (px + tau * gx) / denom
        py = (py + tau * gy) / denom
    return img - weight * _div(px, py)


def tv_denoise(frame: Frame, weight: float, inner_iters: int = 5) -> Frame:
    """Isotropic TV denoising of a single frame.

    Args:
        frame: input image.
        weight: TV weight; 0 returns the input unchanged.
        inner_iters: dual projected-gradient iterations.

    Returns:
        Denoised frame.  The discrete TV of the result never exceeds that of
        the input.
    """
    if weight < 0:
        raise ValueError(f"weight must be >= 0, got {weight}")
    if inner_iters < 1:
        raise ValueError(f"inner_iters must be >= 1, got {inner_iters}")
    out = _tv_denoise(frame.samples.astype(np.float64), float(weight), int(inner_iters))
    return Frame(out.astype(np.float32))


# ===== GAP-TV solver =====


def coverage_map(c: CodingCube) -> Frame:
    """Per-pixel sum of squared mask values; 0 marks pixels no mask observes."""
    cov = (c.samples.astype(np.float64) ** 2).sum(axis=0)
    return Frame(cov.astype(np.float32))


def gap_tv_reconstruct(
    y: Frame,
    c: CodingCube,
    params: GapTvParams | None = None,
    callback: Callable[[int, float], None] | None = None,
) -> VideoCube:
    """Recover the coded block behind one compressive frame.

    Args:
        y: compressive measurement.
        c: coding cube used during capture.
        params: solver settings; defaults to GapTvParams().
        callback: optional hook called as callback(iteration, residual_norm)
            with the L2 data residual measured right after each projection.

    Returns:
        VideoCube with one frame per mask plane, clamped to [0, 1].
    """
    params = params or GapTvParams()
    if y.samples.shape != c.samples.shape[1:]:
        raise ValueError(
            f"measurement {y.samples.shape} does not match mask planes {c.samples.shape[1:]}"
        )

    masks = c.samples.astype(np.float64)
    meas = y.samples.astype(np.float64)
    coverage = (masks * masks).sum(axis=0)
    zero_cov = int((coverage == 0).sum())
    if zero_cov:
        logger.warning(
            "%d of %d pixels have zero mask coverage; the data step leaves them "
            "at their initialization",
            zero_cov,
            coverage.size,
        )
    safe_cov = np.maximum(coverage, params.epsilon_r)

    x = masks * (meas / safe_cov)
    for it in range(params.outer_iters):
        residual = meas - (masks * x).sum(axis=0)
        x = x + masks * (residual / safe_cov)
        if callback is not None:
            post = meas - (masks * x).sum(axis=0)
            callback(it, float(np.linalg.norm(post)))
        if params.tv_weight > 0.0:
            for k in range(x.shape[0]):
                x[k] = _tv_denoise(x[k], params.tv_weight, params.tv_inner_iters)

    x = np.clip(x, 0.0, 1.0)
    if not np.isfinite(x).all():
        raise FloatingPointError("reconstruction diverged to non-finite values")
    return VideoCube(x.astype(np.float32))
