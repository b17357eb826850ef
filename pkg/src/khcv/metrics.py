"""Image and flow quality metrics with JSON/CSV report serialization."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import correlate2d

from .tensors import FlowField, Frame, VideoCube

__all__ = [
    "psnr",
    "ssim",
    "l1_distance",
    "mean_epe",
    "MetricReport",
    "video_report",
]

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _data(x) -> np.ndarray:
    if isinstance(x, (Frame, VideoCube)):
        return x.samples
    return np.asarray(x)


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = _data(a), _data(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a.astype(np.float64), b.astype(np.float64)


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give math.inf."""
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    taps = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    window = np.outer(taps, taps)
    return window / window.sum()


def ssim(a, b, peak: float = 1.0) -> float:
    """Mean structural similarity with an 11x11 Gaussian window (sigma 1.5).

    Local statistics are taken over the valid correlation region only, so no
    padding bias enters near the borders.  Inputs must be at least 11 pixels
    in each dimension.
    """
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise ValueError(f"ssim expects single frames, got shape {a.shape}")
    if min(a.shape) < _SSIM_WINDOW:
        raise ValueError(f"frames must be at least {_SSIM_WINDOW} px per side, got {a.shape}")

    window = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    mu_a = correlate2d(a, window, mode="valid")
    mu_b = correlate2d(b, window, mode="valid")
    mu_aa = correlate2d(a * a, window, mode="valid")
    mu_bb = correlate2d(b * b, window, mode="valid")
    mu_ab = correlate2d(a * b, window, mode="valid")

    var_a = mu_aa - mu_a * mu_a
    var_b = mu_bb - mu_b * mu_b
    cov = mu_ab - mu_a * mu_b

    c1 = (_SSIM_K1 * peak) ** 2
    c2 = (_SSIM_K2 * peak) ** 2
    scores = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    return float(scores.mean())


def l1_distance(a, b) -> float:
    """Mean absolute difference over all samples."""
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def mean_epe(f: FlowField, g: FlowField, mask: np.ndarray | None = None) -> float:
    """Mean endpoint error between two flow fields, optionally masked."""
    if f.u.shape != g.u.shape:
        raise ValueError(f"flow shape mismatch: {f.u.shape} vs {g.u.shape}")
    du = f.u.astype(np.float64) - g.u.astype(np.float64)
    dv = f.v.astype(np.float64) - g.v.astype(np.float64)
    epe = np.hypot(du, dv)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != epe.shape:
            raise ValueError(f"mask shape {mask.shape} does not match flow {epe.shape}")
        if not mask.any():
            raise ValueError("mask selects no pixels")
        epe = epe[mask]
    return float(epe.mean())


def _encode_value(x: float):
    return "inf" if math.isinf(x) else x


@dataclass(frozen=True)
class MetricReport:
    """Per-frame values of one metric plus the assumed dynamic range."""

    name: str
    values: list[float] = field(default_factory=list)
    dynamic_range: float = 1.0

    @property
    def mean(self) -> float:
        if not self.values:
            raise ValueError("report holds no values")
        return float(np.mean(self.values))

    def to_json(self) -> str:
        payload = {
            "metric": self.name,
            "dynamic_range": self.dynamic_range,
            "per_frame": [_encode_value(v) for v in self.values],
            "mean": _encode_value(self.mean),
        }
        return json.dumps(payload, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["frame", self.name])
        for k, value in enumerate(self.values, start=1):
            writer.writerow([k, _encode_value(value)])
        writer.writerow(["mean", _encode_value(self.mean)])
        return buf.getvalue()


def video_report(name: str, a: VideoCube, b: VideoCube, peak: float = 1.0) -> MetricReport:
    """Apply one metric frame by frame across two cubes of equal shape."""
    if a.samples.shape != b.samples.shape:
        raise ValueError(f"cube shape mismatch: {a.samples.shape} vs {b.samples.shape}")
    fn = {"psnr": psnr, "ssim": ssim, "l1": l1_distance}.get(name)
    if fn is None:
        raise ValueError(f"unknown metric {name!r}")
    if name == "l1":
        values = [fn(a.samples[k], b.samples[k]) for k in range(a.frames)]
    else:
        values = [fn(a.samples[k], b.samples[k], peak) for k in range(a.frames)]
    return MetricReport(name=name, values=values, dynamic_range=peak)
