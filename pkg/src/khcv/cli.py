"""End-to-end pipeline harness and command line interface.

Wires capture simulation, reconstruction, fusion and metrics into single
runs and frame-gap sweeps driven by a JSON config.  Exit codes: 0 success,
2 bad configuration, 3 bad or missing data, 4 numerical failure.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np

from .capture import (
    HybridMeasurement,
    NoiseModel,
    build_schedule,
    generate_masks,
    read_measurement,
    simulate_capture,
    write_measurement,
)
from .flow import FlowParams, flow_to_color
from .fusion import FusionParams, fuse_frame_detailed, fuse_video
from .metrics import l1_distance, psnr, ssim, video_report
from .recon import GapTvParams, gap_tv_reconstruct
from .tensors import (
    FlowField,
    FormatError,
    Frame,
    VideoCube,
    export_pgm,
    export_ppm,
    import_pgm,
    load_tensor,
    save_tensor,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericalError",
    "PipelineConfig",
    "PipelineResult",
    "SweepResult",
    "load_scene",
    "run_pipeline",
    "sweep_frame_gap",
    "main",
]

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ConfigError(Exception):
    """The run configuration is malformed or inconsistent."""


class DataError(Exception):
    """Input data is missing, malformed or mismatched."""


class NumericalError(Exception):
    """A solver produced non-finite values."""


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one pipeline run needs, loadable from JSON."""

    scene: str
    B: int = 16
    t_x: int = 2083
    t_g: int = 0
    gap_frames: int = 0
    mask_seed: int = 1
    mask_density: float = 0.5
    noise_sigma: float = 0.0
    noise_seed: int = 1
    out_dir: str = "out"
    dump_intermediates: bool = False
    save_pgm: bool = False
    gap_tv: GapTvParams = field(default_factory=GapTvParams)
    fusion: FusionParams = field(default_factory=FusionParams)

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known - {"flow"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "scene" not in raw:
            raise ConfigError("config must name a scene")
        try:
            fusion_kwargs = dict(raw.get("fusion", {}))
            if "flow" in raw:
                fusion_kwargs["flow_params"] = FlowParams(**raw["flow"])
            fusion_params = FusionParams(**fusion_kwargs)
            gap_tv_params = GapTvParams(**raw.get("gap_tv", {}))
            cfg = cls(
                scene=raw["scene"],
                B=raw.get("B", 16),
                t_x=raw.get("t_x", 2083),
                t_g=raw.get("t_g", 0),
                gap_frames=raw.get("gap_frames", 0),
                mask_seed=raw.get("mask_seed", 1),
                mask_density=raw.get("mask_density", 0.5),
                noise_sigma=raw.get("noise_sigma", 0.0),
                noise_seed=raw.get("noise_seed", 1),
                out_dir=raw.get("out_dir", "out"),
                dump_intermediates=raw.get("dump_intermediates", False),
                save_pgm=raw.get("save_pgm", False),
                gap_tv=gap_tv_params,
                fusion=fusion_params,
            )
            # validate schedule arithmetic, seeds and noise settings eagerly
            build_schedule(cfg.t_x, cfg.B, cfg.t_g)
            _noise_model(cfg)
            if not 0 <= int(cfg.mask_seed) < 2**64:
                raise ValueError(f"mask_seed must fit in 64 bits, got {cfg.mask_seed}")
            if cfg.noise_sigma < 0:
                raise ValueError(f"noise_sigma must be >= 0, got {cfg.noise_sigma}")
            if not 0.0 < cfg.mask_density <= 1.0:
                raise ValueError(f"mask_density must lie in (0, 1], got {cfg.mask_density}")
            if cfg.gap_frames < 0:
                raise ValueError(f"gap_frames must be >= 0, got {cfg.gap_frames}")
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cfg

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {
            "scene": self.scene,
            "B": self.B,
            "t_x": self.t_x,
            "t_g": self.t_g,
            "gap_frames": self.gap_frames,
            "mask_seed": self.mask_seed,
            "mask_density": self.mask_density,
            "noise_sigma": self.noise_sigma,
            "noise_seed": self.noise_seed,
            "out_dir": self.out_dir,
            "dump_intermediates": self.dump_intermediates,
            "save_pgm": self.save_pgm,
            "gap_tv": dataclasses.asdict(self.gap_tv),
            "fusion": {
                "beta": self.fusion.beta,
                "error_smooth_radius": self.fusion.error_smooth_radius,
                "epsilon_blend": self.fusion.epsilon_blend,
                "fallback_threshold": self.fusion.fallback_threshold,
                "normalize_keys": self.fusion.normalize_keys,
                "chain_flows": self.fusion.chain_flows,
            },
            "flow": dataclasses.asdict(self.fusion.flow_params),
        }


def _noise_model(cfg: PipelineConfig) -> NoiseModel:
    if cfg.noise_sigma > 0.0:
        return NoiseModel.gaussian(cfg.noise_sigma, cfg.noise_seed)
    return NoiseModel.off()


def load_scene(path) -> VideoCube:
    """Load a scene: either a stored video cube or a directory of PGM frames.

    Directory frames are stacked in lexicographic filename order.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"scene {path} does not exist")
    if path.is_dir():
        frames = sorted(p for p in path.iterdir() if p.suffix.lower() == ".pgm")
        if not frames:
            raise DataError(f"scene directory {path} holds no .pgm files")
        try:
            stack = [import_pgm(p).samples for p in frames]
        except FormatError as exc:
            raise DataError(str(exc)) from exc
        shapes = {a.shape for a in stack}
        if len(shapes) > 1:
            raise DataError(f"scene frames disagree in size: {sorted(shapes)}")
        return VideoCube(np.stack(stack))
    try:
        data = load_tensor(path)
    except FormatError as exc:
        raise DataError(str(exc)) from exc
    if not isinstance(data, VideoCube):
        raise DataError(f"scene {path} holds a {type(data).__name__}, expected a video cube")
    return data


def _json_value(x: float):
    return "inf" if math.isinf(x) else x


def _frame_rows(truth: VideoCube, cube: VideoCube) -> list[dict]:
    rows = []
    for k in range(truth.frames):
        a, b = cube.samples[k], truth.samples[k]
        rows.append(
            {
                "k": k + 1,
                "psnr_db": _json_value(psnr(a, b)),
                "ssim": ssim(a, b),
                "l1": l1_distance(a, b),
            }
        )
    return rows


def _mean_block(truth: VideoCube, cube: VideoCube) -> dict:
    return {
        "psnr_db": _json_value(video_report("psnr", cube, truth).mean),
        "ssim": video_report("ssim", cube, truth).mean,
        "l1": video_report("l1", cube, truth).mean,
        "lpips": "unavailable",
    }


@dataclass(frozen=True)
class PipelineResult:
    """Output paths and quality numbers of one pipeline run."""

    out_dir: Path
    report: dict

    @property
    def mean_psnr(self) -> float:
        value = self.report["mean"]["psnr_db"]
        return math.inf if value == "inf" else float(value)

    @property
    def mean_ssim(self) -> float:
        return float(self.report["mean"]["ssim"])

    @property
    def intermediate_mean_psnr(self) -> float:
        value = self.report["intermediate_mean"]["psnr_db"]
        return math.inf if value == "inf" else float(value)


def _check_finite(cube: VideoCube, stage: str) -> None:
    if not np.isfinite(cube.samples).all():
        raise NumericalError(f"{stage} produced non-finite values")


def _dump_fusion_intermediates(out: Path, m: HybridMeasurement, x_mid: VideoCube, cfg: PipelineConfig) -> None:
    dump = out / "intermediates"
    dump.mkdir(exist_ok=True)
    for k in range(1, m.schedule.B + 1):
        detail = fuse_frame_detailed(
            m.z_left, m.z_right, Frame(x_mid.samples[k - 1]), k, m.schedule.B,
            dataclasses.replace(cfg.fusion, chain_flows=False),
        )
        save_tensor(detail.flow_left, dump / f"flow_left_{k:03d}.khcv")
        save_tensor(detail.flow_right, dump / f"flow_right_{k:03d}.khcv")
        export_ppm(flow_to_color(detail.flow_left), dump / f"flow_left_{k:03d}.ppm")
        export_ppm(flow_to_color(detail.flow_right), dump / f"flow_right_{k:03d}.ppm")
        export_pgm(Frame(detail.visibility.values), dump / f"visibility_{k:03d}.pgm")


def run_pipeline(cfg: PipelineConfig) -> PipelineResult:
    """Simulate, reconstruct, fuse and score one scene end to end.

    Writes the measurement, both reconstructions and a JSON/CSV report under
    cfg.out_dir and returns the parsed report.  Metrics cover the B coded
    frames only; key frames are never scored.
    """
    scene = load_scene(cfg.scene)
    B = cfg.B
    needed = B + 2 + 2 * cfg.gap_frames
    if scene.frames < needed:
        raise DataError(
            f"scene has {scene.frames} frames but B={B} with gap_frames={cfg.gap_frames} "
            f"needs at least {needed}"
        )

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    schedule = build_schedule(cfg.t_x, B, cfg.t_g)
    masks = generate_masks(cfg.mask_seed, scene.height, scene.width, B, cfg.mask_density)
    noise = _noise_model(cfg)
    m = simulate_capture(scene, masks, schedule, cfg.gap_frames, noise)
    write_measurement(
        m, out, seed=cfg.mask_seed,
        extra={"noise_sigma": cfg.noise_sigma, "noise_seed": cfg.noise_seed},
    )

    try:
        x_mid = gap_tv_reconstruct(m.y, m.masks, cfg.gap_tv)
    except FloatingPointError as exc:
        raise NumericalError(str(exc)) from exc
    _check_finite(x_mid, "reconstruction")
    save_tensor(x_mid, out / "intermediate.khcv")

    fused = fuse_video(m, x_mid, cfg.fusion)
    _check_finite(fused, "fusion")
    save_tensor(fused, out / "fused.khcv")

    if cfg.save_pgm:
        seq = out / "fused_pgm"
        seq.mkdir(exist_ok=True)
        for k in range(B):
            export_pgm(Frame(fused.samples[k]), seq / f"fused_{k + 1:03d}.pgm")
    if cfg.dump_intermediates:
        _dump_fusion_intermediates(out, m, x_mid, cfg)

    start = (scene.frames - B) // 2
    truth = VideoCube(scene.samples[start : start + B])
    report = {
        "config": cfg.to_dict(),
        "per_frame": _frame_rows(truth, fused),
        "mean": _mean_block(truth, fused),
        "intermediate_mean": _mean_block(truth, x_mid),
    }
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")

    with (out / "per_frame.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "psnr_db", "ssim", "l1"])
        for row in report["per_frame"]:
            writer.writerow([row["k"], row["psnr_db"], row["ssim"], row["l1"]])
        mean = report["mean"]
        writer.writerow(["mean", mean["psnr_db"], mean["ssim"], mean["l1"]])

    return PipelineResult(out_dir=out, report=report)


@dataclass(frozen=True)
class SweepResult:
    """Fused quality as a function of the key-frame gap."""

    rows: list[dict]

    def to_json(self) -> str:
        return json.dumps({"sweep": self.rows}, indent=2)

    def to_csv(self) -> str:
        import io

        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["gap_frames", "gap_ratio", "mean_psnr_db", "mean_ssim"])
        for row in self.rows:
            writer.writerow([row["gap_frames"], row["gap_ratio"], row["mean_psnr_db"], row["mean_ssim"]])
        return buf.getvalue()


def sweep_frame_gap(cfg: PipelineConfig, gaps: list[int]) -> SweepResult:
    """Run the pipeline once per gap value with identical seeds.

    Results land in out_dir/gap_<g>/ plus sweep.json and sweep.csv at the
    top level; rows come back sorted by gap.
    """
    if not gaps:
        raise ConfigError("sweep needs at least one gap value")
    if any(g < 0 for g in gaps):
        raise ConfigError(f"gap values must be >= 0, got {sorted(gaps)}")
    if len(set(gaps)) != len(gaps):
        raise ConfigError(f"duplicate gap values: {sorted(gaps)}")

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for gap in sorted(gaps):
        sub = dataclasses.replace(cfg, gap_frames=gap, out_dir=str(out / f"gap_{gap}"))
        result = run_pipeline(sub)
        rows.append(
            {
                "gap_frames": gap,
                "gap_ratio": gap / cfg.B,
                "mean_psnr_db": result.report["mean"]["psnr_db"],
                "mean_ssim": result.report["mean"]["ssim"],
                "intermediate_mean_psnr_db": result.report["intermediate_mean"]["psnr_db"],
            }
        )
    sweep = SweepResult(rows=rows)
    (out / "sweep.json").write_text(sweep.to_json() + "\n")
    (out / "sweep.csv").write_text(sweep.to_csv())
    return sweep


# ===== command line front end =====


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except (DataError, FormatError, FileNotFoundError) as exc:
        _fail(EXIT_DATA, str(exc))
    except OSError as exc:
        _fail(EXIT_DATA, str(exc))
    except NumericalError as exc:
        _fail(EXIT_NUMERIC, str(exc))
    except FloatingPointError as exc:
        _fail(EXIT_NUMERIC, str(exc))
    except ValueError as exc:
        _fail(EXIT_DATA, str(exc))


def _load_config(config_path, out_dir, mask_seed, noise_seed, dump) -> PipelineConfig:
    cfg = PipelineConfig.from_json(config_path)
    updates = {}
    if out_dir is not None:
        updates["out_dir"] = out_dir
    if mask_seed is not None:
        updates["mask_seed"] = mask_seed
    if noise_seed is not None:
        updates["noise_seed"] = noise_seed
    if dump:
        updates["dump_intermediates"] = True
    return dataclasses.replace(cfg, **updates) if updates else cfg


_config_option = click.option("--config", "config_path", required=True, type=click.Path(), help="JSON run configuration.")
_out_option = click.option("--out", "out_dir", default=None, type=click.Path(), help="Override the output directory.")
_mask_seed_option = click.option("--mask-seed", type=int, default=None, help="Override the mask seed.")
_noise_seed_option = click.option("--noise-seed", type=int, default=None, help="Override the noise seed.")
_dump_option = click.option("--dump-intermediates", "dump", is_flag=True, help="Write flows, colorized flows and visibility maps.")


@click.group()
def main():
    """Hybrid compressive video sensing toolchain."""


@main.command()
@_config_option
@_out_option
@_mask_seed_option
@_noise_seed_option
def simulate(config_path, out_dir, mask_seed, noise_seed):
    """Simulate one hybrid measurement and write it with its manifest."""

    def body():
        cfg = _load_config(config_path, out_dir, mask_seed, noise_seed, False)
        scene = load_scene(cfg.scene)
        needed = cfg.B + 2 + 2 * cfg.gap_frames
        if scene.frames < needed:
            raise DataError(f"scene has {scene.frames} frames, need at least {needed}")
        schedule = build_schedule(cfg.t_x, cfg.B, cfg.t_g)
        masks = generate_masks(cfg.mask_seed, scene.height, scene.width, cfg.B, cfg.mask_density)
        m = simulate_capture(scene, masks, schedule, cfg.gap_frames, _noise_model(cfg))
        manifest = write_measurement(
            m, cfg.out_dir, seed=cfg.mask_seed,
            extra={"noise_sigma": cfg.noise_sigma, "noise_seed": cfg.noise_seed},
        )
        click.echo(f"wrote {manifest}")

    _guarded(body)


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(), help="Measurement manifest JSON.")
@_config_option
@_out_option
def reconstruct(manifest_path, config_path, out_dir):
    """Reconstruct the coded block behind a stored measurement."""

    def body():
        cfg = _load_config(config_path, out_dir, None, None, False)
        m = read_measurement(manifest_path)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        try:
            x_mid = gap_tv_reconstruct(m.y, m.masks, cfg.gap_tv)
        except FloatingPointError as exc:
            raise NumericalError(str(exc)) from exc
        save_tensor(x_mid, out / "intermediate.khcv")
        click.echo(f"wrote {out / 'intermediate.khcv'}")

    _guarded(body)


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(), help="Measurement manifest JSON.")
@click.option("--intermediate", "intermediate_path", required=True, type=click.Path(), help="Intermediate reconstruction cube.")
@_config_option
@_out_option
@_dump_option
def fuse(manifest_path, intermediate_path, config_path, out_dir, dump):
    """Fuse a stored intermediate reconstruction with its key frames."""

    def body():
        cfg = _load_config(config_path, out_dir, None, None, dump)
        m = read_measurement(manifest_path)
        data = load_tensor(intermediate_path)
        if not isinstance(data, VideoCube):
            raise DataError(f"{intermediate_path} holds a {type(data).__name__}, expected a video cube")
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        fused = fuse_video(m, data, cfg.fusion)
        _check_finite(fused, "fusion")
        save_tensor(fused, out / "fused.khcv")
        if cfg.dump_intermediates:
            _dump_fusion_intermediates(out, m, data, cfg)
        click.echo(f"wrote {out / 'fused.khcv'}")

    _guarded(body)


@main.command()
@_config_option
@_out_option
@_mask_seed_option
@_noise_seed_option
@_dump_option
def pipeline(config_path, out_dir, mask_seed, noise_seed, dump):
    """Run simulate, reconstruct, fuse and metrics in one go."""

    def body():
        cfg = _load_config(config_path, out_dir, mask_seed, noise_seed, dump)
        result = run_pipeline(cfg)
        mean = result.report["mean"]
        inter = result.report["intermediate_mean"]
        click.echo(f"fused mean PSNR {mean['psnr_db']} dB, SSIM {mean['ssim']:.4f}")
        click.echo(f"intermediate mean PSNR {inter['psnr_db']} dB, SSIM {inter['ssim']:.4f}")
        click.echo(f"report: {result.out_dir / 'report.json'}")

    _guarded(body)


@main.command()
@_config_option
@_out_option
@_mask_seed_option
@_noise_seed_option
@click.option("--gaps", default="0,1,2,3,4", show_default=True, help="Comma-separated gap values.")
def sweep(config_path, out_dir, mask_seed, noise_seed, gaps):
    """Sweep the key-frame gap and tabulate fused quality."""

    def body():
        cfg = _load_config(config_path, out_dir, mask_seed, noise_seed, False)
        try:
            gap_values = [int(tok) for tok in gaps.split(",") if tok.strip() != ""]
        except ValueError as exc:
            raise ConfigError(f"bad --gaps value {gaps!r}") from exc
        result = sweep_frame_gap(cfg, gap_values)
        for row in result.rows:
            click.echo(
                f"gap {row['gap_frames']}: fused PSNR {row['mean_psnr_db']} dB, "
                f"SSIM {row['mean_ssim']:.4f}"
            )

    _guarded(body)


@main.command()
@click.argument("reference", type=click.Path())
@click.argument("candidate", type=click.Path())
@click.option("--out", "out_path", default=None, type=click.Path(), help="Write the JSON report here.")
def metrics(reference, candidate, out_path):
    """Score a stored frame or cube against a reference of the same shape."""

    def body():
        ref = load_tensor(reference)
        cand = load_tensor(candidate)
        if isinstance(ref, Frame) and isinstance(cand, Frame):
            truth = VideoCube(ref.samples[np.newaxis])
            probe = VideoCube(cand.samples[np.newaxis])
        elif isinstance(ref, VideoCube) and isinstance(cand, VideoCube):
            truth, probe = ref, cand
        else:
            raise DataError(
                f"cannot compare {type(ref).__name__} with {type(cand).__name__}"
            )
        if truth.samples.shape != probe.samples.shape:
            raise DataError(
                f"shape mismatch: {truth.samples.shape} vs {probe.samples.shape}"
            )
        report = {
            "per_frame": _frame_rows(truth, probe),
            "mean": _mean_block(truth, probe),
        }
        text = json.dumps(report, indent=2)
        click.echo(text)
        if out_path is not None:
            Path(out_path).write_text(text + "\n")

    _guarded(body)


@main.command()
@click.argument("flow_path", type=click.Path())
@click.argument("out_path", type=click.Path())
@click.option("--max-magnitude", type=float, default=None, help="Saturation scale in pixels; default is the 99th percentile.")
def flowviz(flow_path, out_path, max_magnitude):
    """Colorize a stored flow field into a PPM image."""

    def body():
        data = load_tensor(flow_path)
        if not isinstance(data, FlowField):
            raise DataError(f"{flow_path} holds a {type(data).__name__}, expected a flow field")
        export_ppm(flow_to_color(data, max_magnitude), out_path)
        click.echo(f"wrote {out_path}")

    _guarded(body)


if __name__ == "__main__":
    main()
