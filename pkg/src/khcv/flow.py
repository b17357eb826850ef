"""Dense optical flow estimation with a coarse-to-fine Horn-Schunck solver.

A flow field f maps a source image onto a target grid through backward
warping: out(p) = source(p + f(p)).  estimate_flow returns the field that
makes that warp match the target.  The solver builds binomially filtered
image pyramids, relaxes the classic Horn-Schunck equations at each level
with the data term linearized around the current warp, and upsamples the
field between levels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .tensors import FlowField, Frame

__all__ = [
    "FlowParams",
    "estimate_flow",
    "compose_flows",
    "flow_to_color",
    "sample_bilinear",
]

_MIN_COARSE_SIDE = 8

# binomial 5-tap prefilter applied before every 2x downsample
_BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0

# original Horn-Schunck neighborhood average: cardinal 1/6, diagonal 1/12
_HS_AVG = np.array([[1.0, 2.0, 1.0], [2.0, 0.0, 2.0], [1.0, 2.0, 1.0]]) / 12.0


@dataclass(frozen=True)
class FlowParams:
    """Settings for the pyramidal Horn-Schunck solver.

    alpha weighs the smoothness term against the data term on the [0, 1]
    intensity scale; larger values give smoother fields.
    """

    pyramid_levels: int = 3
    alpha: float = 0.05
    iters_per_level: int = 100
    warps_per_level: int = 3

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise ValueError(f"pyramid_levels must be >= 1, got {self.pyramid_levels}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.iters_per_level < 1:
            raise ValueError(f"iters_per_level must be >= 1, got {self.iters_per_level}")
        if self.warps_per_level < 1:
            raise ValueError(f"warps_per_level must be >= 1, got {self.warps_per_level}")


def sample_bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample img at continuous (x, y) positions with replicate borders.

    Uses the lerp form a + t*(b - a), so sampling at integer coordinates
    reproduces the stored values exactly.
    """
    h, w = img.shape
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = x - x0
    wy = y - y0
    top = img[y0, x0] + wx * (img[y0, x1] - img[y0, x0])
    bottom = img[y1, x0] + wx * (img[y1, x1] - img[y1, x0])
    return top + wy * (bottom - top)


def _warp_by_flow(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = img.shape
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return sample_bilinear(img, xx + u, yy + v)


def _downsample(img: np.ndarray) -> np.ndarray:
    filtered = ndimage.correlate1d(img, _BINOMIAL5, axis=0, mode="nearest")
    filtered = ndimage.correlate1d(filtered, _BINOMIAL5, axis=1, mode="nearest")
    return filtered[::2, ::2]


def _resize_bilinear(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = img.shape
    ht, wt = shape
    ys = (np.arange(ht, dtype=np.float64) + 0.5) * (h / ht) - 0.5
    xs = (np.arange(wt, dtype=np.float64) + 0.5) * (w / wt) - 0.5
    xx, yy = np.meshgrid(xs, ys)
    return sample_bilinear(img, xx, yy)


def _central_diff(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # central differences with replicate borders (half one-sided at the edges)
    dx = np.empty_like(img)
    dx[:, 1:-1] = (img[:, 2:] - img[:, :-2]) * 0.5
    dx[:, 0] = (img[:, 1] - img[:, 0]) * 0.5
    dx[:, -1] = (img[:, -1] - img[:, -2]) * 0.5
    dy = np.empty_like(img)
    dy[1:-1, :] = (img[2:, :] - img[:-2, :]) * 0.5
    dy[0, :] = (img[1, :] - img[0, :]) * 0.5
    dy[-1, :] = (img[-1, :] - img[-2, :]) * 0.5
    return dx, dy


def _neighborhood_avg(field: np.ndarray) -> np.ndarray:
    return ndimage.correlate(field, _HS_AVG, mode="nearest")


def _relax_level(
    target: np.ndarray,
    source: np.ndarray,
    u: np.ndarray,
    v: np.ndarray,
    params: FlowParams,
) -> tuple[np.ndarray, np.ndarray]:
    """Run warps_per_level linearizations of the data term at one level."""
    alpha_sq = params.alpha * params.alpha
    for _ in range(params.warps_per_level):
        warped = _warp_by_flow(source, u, v)
        avg_img = 0.5 * (target + warped)
        fx, fy = _central_diff(avg_img)
        ft = warped - target
        denom = alpha_sq + fx * fx + fy * fy
        u0 = u.copy()
        v0 = v.copy()
        for _ in range(params.iters_per_level):
            u_bar = _neighborhood_avg(u)
            v_bar = _neighborhood_avg(v)
            t = (fx * (u_bar - u0) + fy * (v_bar - v0) + ft) / denom
            u = u_bar - fx * t
            v = v_bar - fy * t
    return u, v


def estimate_flow(target: Frame, source: Frame, params: FlowParams | None = None) -> FlowField:
    """Estimate the dense field f with source(p + f(p)) matching target(p).

    Args:
        target: frame the flow is anchored to.
        source: frame being sampled.
        params: solver settings; defaults to FlowParams().

    Returns:
        FlowField on the target grid.  Identical inputs give an exactly zero
        field.

    Raises:
        ValueError: if the shapes differ or the image is too small for the
            requested pyramid depth (coarsest level must keep both sides at
            least 8 px).
    """
    params = params or FlowParams()
    if target.samples.shape != source.samples.shape:
        raise ValueError(
            f"target {target.samples.shape} and source {source.samples.shape} disagree"
        )
    min_side = min(target.height, target.width)
    if min_side < _MIN_COARSE_SIDE * 2 ** (params.pyramid_levels - 1):
        raise ValueError(
            f"minimum side {min_side} is too small for {params.pyramid_levels} pyramid "
            f"levels; need at least {_MIN_COARSE_SIDE * 2 ** (params.pyramid_levels - 1)} px"
        )

    targets = [target.samples.astype(np.float64)]
    sources = [source.samples.astype(np.float64)]
    for _ in range(params.pyramid_levels - 1):
        targets.append(_downsample(targets[-1]))
        sources.append(_downsample(sources[-1]))

    u = np.zeros_like(targets[-1])
    v = np.zeros_like(targets[-1])
    for level in range(params.pyramid_levels - 1, -1, -1):
        if u.shape != targets[level].shape:
            u = _resize_bilinear(u, targets[level].shape) * 2.0
            v = _resize_bilinear(v, targets[level].shape) * 2.0
        u, v = _relax_level(targets[level], sources[level], u, v, params)
    return FlowField(u.astype(np.float32), v.astype(np.float32))


def compose_flows(steps: Sequence[FlowField]) -> FlowField:
    """Chain per-step fields into one net field.

    For steps [f1, f2, ...] the composition accumulates displacement along
    the motion path: total(p) = f1(p) + rest(p + f1(p)), with the remaining
    field sampled bilinearly (replicate borders).
    """
    if not steps:
        raise ValueError("need at least one flow field to compose")
    shape = steps[0].u.shape
    for f in steps[1:]:
        if f.u.shape != shape:
            raise ValueError("all flow fields must share one shape")
    total_u = steps[0].u.astype(np.float64)
    total_v = steps[0].v.astype(np.float64)
    h, w = shape
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    for f in steps[1:]:
        xq = xx + total_u
        yq = yy + total_v
        total_u = total_u + sample_bilinear(f.u.astype(np.float64), xq, yq)
        total_v = total_v + sample_bilinear(f.v.astype(np.float64), xq, yq)
    return FlowField(total_u.astype(np.float32), total_v.astype(np.float32))


def flow_to_color(f: FlowField, max_magnitude: float | None = None) -> np.ndarray:
    """Map a flow field to an (H, W, 3) RGB array in [0, 1].

    Direction selects the hue (angle of (u, v) on the color wheel), magnitude
    the saturation: zero flow is white, a vector at max_magnitude is fully
    saturated.  When max_magnitude is None the 99th percentile of the
    magnitudes is used.
    """
    u = f.u.astype(np.float64)
    v = f.v.astype(np.float64)
    mag = np.hypot(u, v)
    if max_magnitude is None:
        max_magnitude = float(np.percentile(mag, 99.0))
    if max_magnitude <= 0.0:
        max_magnitude = 1.0
    sat = np.clip(mag / max_magnitude, 0.0, 1.0)
    hue = (np.arctan2(v, u) / (2.0 * np.pi)) % 1.0

    # HSV to RGB with value fixed at 1
    sector = hue * 6.0
    idx = np.floor(sector).astype(np.intp) % 6
    frac = sector - np.floor(sector)
    p = 1.0 - sat
    q = 1.0 - sat * frac
    t = 1.0 - sat * (1.0 - frac)
    one = np.ones_like(sat)
    lut_r = np.stack([one, q, p, p, t, one])
    lut_g = np.stack([t, one, one, q, p, p])
    lut_b = np.stack([p, p, t, one, one, q])
    rows, cols = np.indices(sat.shape)
    rgb = np.stack([lut_r[idx, rows, cols], lut_g[idx, rows, cols], lut_b[idx, rows, cols]], axis=-1)
    return rgb.astype(np.float32)
