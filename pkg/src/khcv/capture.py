"""Capture simulation for hybrid compressive video sensing.

Models a sensor that integrates B mask-coded scene frames into a single
compressive measurement while a second, short-exposure channel records an
uncoded key frame immediately before and after the coded block:

    y(i, j) = sum_k c(i, j, k) * x(i, j, k) + g(i, j)

Key frames share the per-frame exposure t_x, the coded exposure is
t_y = B * t_x, and an optional gap skips whole frames between the coded
block and each key frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensors import CodingCube, Frame, VideoCube, load_tensor, save_tensor

__all__ = [
    "TimingSchedule",
    "NoiseModel",
    "HybridMeasurement",
    "build_schedule",
    "compressive_ratio",
    "generate_masks",
    "encode",
    "sample_keyframes",
    "simulate_capture",
    "write_measurement",
    "read_measurement",
]

# Noise stream roles keep the compressive frame and the two key frames
# statistically independent while staying reproducible from one seed.
_ROLE_COMPRESSIVE = 0
_ROLE_KEY_LEFT = 1
_ROLE_KEY_RIGHT = 2


@dataclass(frozen=True)
class TimingSchedule:
    """Exposure plan in integer microseconds.

    t_x is the per-frame exposure, t_y the coded exposure covering B frames,
    t_z the key-frame exposure and t_g the dead time between the coded block
    and each key frame.
    """

    t_x: int
    t_y: int
    t_z: int
    t_g: int
    B: int

    def __post_init__(self):
        for name in ("t_x", "t_y", "t_z", "t_g", "B"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)):
                raise ValueError(f"{name} must be an integer microsecond count, got {value!r}")
        if self.B < 1:
            raise ValueError(f"B must be >= 1, got {self.B}")
        if self.t_x <= 0:
            raise ValueError(f"t_x must be positive, got {self.t_x}")
        if self.t_g < 0:
            raise ValueError(f"t_g must be >= 0, got {self.t_g}")
        if self.t_y != self.B * self.t_x:
            raise ValueError(f"t_y must equal B*t_x = {self.B * self.t_x}, got {self.t_y}")
        if self.t_z != self.t_x:
            raise ValueError(f"t_z must equal t_x = {self.t_x}, got {self.t_z}")


def build_schedule(t_x: int, B: int, t_g: int = 0) -> TimingSchedule:
    """Derive the full exposure plan from the per-frame exposure.

    Args:
        t_x: per-frame exposure in integer microseconds.
        B: number of coded frames per compressive measurement.
        t_g: dead time between the coded block and each key frame.

    Returns:
        TimingSchedule with t_y = B * t_x and t_z = t_x.
    """
    if not isinstance(t_x, (int, np.integer)) or t_x <= 0:
        raise ValueError(f"t_x must be a positive integer, got {t_x!r}")
    if not isinstance(B, (int, np.integer)) or B < 1:
        raise ValueError(f"B must be a positive integer, got {B!r}")
    if not isinstance(t_g, (int, np.integer)) or t_g < 0:
        raise ValueError(f"t_g must be a non-negative integer, got {t_g!r}")
    return TimingSchedule(t_x=int(t_x), t_y=int(B) * int(t_x), t_z=int(t_x), t_g=int(t_g), B=int(B))


def compressive_ratio(B: int) -> float:
    """Fraction of frames read out per coded block: 2 key frames over B + 1 slots."""
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    return 2.0 / (B + 1)


@dataclass(frozen=True)
class NoiseModel:
    """Additive measurement noise on the normalized intensity scale."""

    kind: str = "none"
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "additive-gaussian"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")

    @classmethod
    def off(cls) -> "NoiseModel":
        return cls(kind="none")

    @classmethod
    def gaussian(cls, sigma: float, seed: int) -> "NoiseModel":
        return cls(kind="additive-gaussian", sigma=sigma, seed=seed)

    def field(self, shape: tuple[int, ...], role: int) -> np.ndarray:
        """Draw the noise plane for one measurement role (deterministic per seed)."""
        if self.kind == "none" or self.sigma == 0.0:
            return np.zeros(shape, dtype=np.float64)
        key = np.array([self.seed, role], dtype=np.uint64)
        rng = np.random.Generator(np.random.Philox(key=key))
        return rng.normal(0.0, self.sigma, size=shape)


@dataclass(frozen=True)
class HybridMeasurement:
    """One coded exposure plus its two flanking key frames."""

    y: Frame
    z_left: Frame
    z_right: Frame
    masks: CodingCube
    schedule: TimingSchedule
    gap_frames: int

    def __post_init__(self):
        shape = self.y.samples.shape
        if self.z_left.samples.shape != shape or self.z_right.samples.shape != shape:
            raise ValueError("key frames must match the compressive frame size")
        if self.masks.samples.shape[1:] != shape:
            raise ValueError("mask planes must match the compressive frame size")
        if self.masks.frames != self.schedule.B:
            raise ValueError(
                f"mask count {self.masks.frames} disagrees with schedule B {self.schedule.B}"
            )
        if self.gap_frames < 0:
            raise ValueError(f"gap_frames must be >= 0, got {self.gap_frames}")


def generate_masks(seed: int, height: int, width: int, frames: int, density: float = 0.5) -> CodingCube:
    """Draw a Bernoulli(density) coding cube from a counter-based generator.

    The Philox stream is keyed by the seed alone and consumed in frame-major
    row-major order, so the cube for a given (seed, shape, density) is
    identical on every platform and independent of evaluation order.
    """
    if not 0 <= int(seed) < 2**64:
        raise ValueError(f"seed must fit in 64 bits, got {seed}")
    if height < 1 or width < 1 or frames < 1:
        raise ValueError(f"mask dims must be positive, got {(frames, height, width)}")
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must lie in (0, 1], got {density}")
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    uniform = rng.random((frames, height, width))
    return CodingCube((uniform < density).astype(np.uint8))


def encode(x: VideoCube, c: CodingCube, noise: NoiseModel | None = None) -> Frame:
    """Integrate a coded block into one compressive frame.

    Computes y = sum_k c_k * x_k + g elementwise, where g is drawn from the
    noise model (deterministic for a given seed).

    Args:
        x: scene block, one frame per mask plane.
        c: binary coding cube, same shape as x.
        noise: optional additive noise; None means noiseless.

    Returns:
        Compressive frame; values can exceed 1 because B frames accumulate.
    """
    if x.samples.shape != c.samples.shape:
        raise ValueError(f"scene {x.samples.shape} and masks {c.samples.shape} disagree")
    noise = noise or NoiseModel.off()
    acc = np.sum(c.samples.astype(np.float64) * x.samples.astype(np.float64), axis=0)
    acc += noise.field(acc.shape, _ROLE_COMPRESSIVE)
    return Frame(acc.astype(np.float32))


def _block_start(scene_frames: int, B: int, gap_frames: int) -> int:
    """Index of the first coded frame; the coded block sits centered in the scene."""
    start = (scene_frames - B) // 2
    if start - 1 - gap_frames < 0 or start + B + gap_frames > scene_frames - 1:
        raise ValueError(
            f"scene with {scene_frames} frames is too short for B={B} and "
            f"gap_frames={gap_frames}; need at least {B + 2 + 2 * gap_frames}"
        )
    return start


def sample_keyframes(
    scene: VideoCube, B: int, gap_frames: int, noise: NoiseModel | None = None
) -> tuple[Frame, Frame]:
    """Read the two uncoded key frames flanking the centered coded block.

    With gap_frames = g the key frames sit g + 1 positions outside the block
    on each side, modeling skipped sensor frames.  Both receive the same
    noise sigma as the compressive channel but independent draws.
    """
    noise = noise or NoiseModel.off()
    start = _block_start(scene.frames, B, gap_frames)
    left = scene.samples[start - 1 - gap_frames].astype(np.float64)
    right = scene.samples[start + B + gap_frames].astype(np.float64)
    left = left + noise.field(left.shape, _ROLE_KEY_LEFT)
    right = right + noise.field(right.shape, _ROLE_KEY_RIGHT)
    return Frame(left.astype(np.float32)), Frame(right.astype(np.float32))


def simulate_capture(
    scene: VideoCube,
    masks: CodingCube,
    schedule: TimingSchedule,
    gap_frames: int = 0,
    noise: NoiseModel | None = None,
) -> HybridMeasurement:
    """Run one full hybrid exposure over a scene with timing margin.

    Encodes the central B scene frames with the coding cube and samples the
    two key frames gap_frames + 1 positions outside the coded block.
    """
    if masks.frames != schedule.B:
        raise ValueError(f"mask count {masks.frames} disagrees with schedule B {schedule.B}")
    if masks.samples.shape[1:] != scene.samples.shape[1:]:
        raise ValueError("mask planes must match the scene frame size")
    start = _block_start(scene.frames, schedule.B, gap_frames)
    block = VideoCube(scene.samples[start : start + schedule.B])
    y = encode(block, masks, noise)
    z_left, z_right = sample_keyframes(scene, schedule.B, gap_frames, noise)
    return HybridMeasurement(
        y=y,
        z_left=z_left,
        z_right=z_right,
        masks=masks,
        schedule=schedule,
        gap_frames=gap_frames,
    )


# ===== Measurement manifest I/O =====

_MANIFEST_FILES = {
    "y": "y.khcv",
    "z_left": "z_left.khcv",
    "z_right": "z_right.khcv",
    "masks": "masks.khcv",
}


def write_measurement(
    m: HybridMeasurement, out_dir, seed: int | None = None, extra: dict | None = None
) -> Path:
    """Store a measurement as binary tensors plus a JSON manifest.

    Returns the manifest path.  `seed` records the mask seed used to build
    the coding cube; `extra` fields are merged into the manifest verbatim.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_tensor(m.y, out / _MANIFEST_FILES["y"])
    save_tensor(m.z_left, out / _MANIFEST_FILES["z_left"])
    save_tensor(m.z_right, out / _MANIFEST_FILES["z_right"])
    save_tensor(m.masks, out / _MANIFEST_FILES["masks"])
    manifest = {
        "files": dict(_MANIFEST_FILES),
        "t_x": m.schedule.t_x,
        "t_y": m.schedule.t_y,
        "t_z": m.schedule.t_z,
        "t_g": m.schedule.t_g,
        "B": m.schedule.B,
        "gap_frames": m.gap_frames,
        "seed": seed,
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_measurement(manifest_path) -> HybridMeasurement:
    """Load a measurement previously stored by write_measurement."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{manifest_path}: not valid JSON ({exc})") from exc
    try:
        files = manifest["files"]
        schedule = TimingSchedule(
            t_x=manifest["t_x"],
            t_y=manifest["t_y"],
            t_z=manifest["t_z"],
            t_g=manifest["t_g"],
            B=manifest["B"],
        )
        gap_frames = manifest["gap_frames"]
    except KeyError as exc:
        raise ValueError(f"{manifest_path}: missing manifest field {exc}") from exc
    base = manifest_path.parent
    y = load_tensor(base / files["y"])
    z_left = load_tensor(base / files["z_left"])
    z_right = load_tensor(base / files["z_right"])
    masks = load_tensor(base / files["masks"])
    if not isinstance(y, Frame) or not isinstance(z_left, Frame) or not isinstance(z_right, Frame):
        raise ValueError(f"{manifest_path}: measurement frames have the wrong tensor kind")
    if not isinstance(masks, CodingCube):
        raise ValueError(f"{manifest_path}: mask file does not hold a coding cube")
    return HybridMeasurement(
        y=y,
        z_left=z_left,
        z_right=z_right,
        masks=masks,
        schedule=schedule,
        gap_frames=gap_frames,
    )
