"""
Subcommand handlers for restore, metrics and simulate.

Each handler takes the validated CliConfig and returns an exit code.
Library errors propagate to cli.app.main, which maps them to exit codes.
"""
import logging
import math
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from engine.errors import EXIT_OK
from engine.pipeline import STREAM_SIMULATOR, derive_seed, run
from utils.metrics import MetricsReport, evaluate_sequence
from utils.reports import format_value, write_key_values
from utils.seqio import (
    FrameSequence,
    extract_yt_slice,
    load_masks,
    load_sequence,
    recombine_color,
    write_image,
    write_sequence,
)
from utils.turbsim import structured_scene, synthesize_sequence

logger = logging.getLogger(__name__)

REPORT_HEADER = (
    "turbdip run report",
    "run.*: sequence and schedule; config.*: fitting parameters",
    "block.<k>.*: init kind and sources, stop/best iteration, final loss, traces",
)
METRICS_HEADER = (
    "turbdip metrics report",
    "background_var on the 0-255 scale; psnr in dB; biqi_external reserved for external values",
)


def _print_metrics(report: MetricsReport, title: str):
    print("\n" + "=" * 70)
    print(f" {title}")
    print("=" * 70)
    print(f"frames               {report.n_frames}")
    if report.background_var is not None:
        print(f"background_var       {format_value(report.background_var)}")
        print(f"background_pixels    {report.n_background_pixels}")
    if report.mean_psnr is not None:
        print(f"mean_psnr            {report.mean_psnr:.4f} dB (std {report.std_psnr:.4f})")
    if report.mean_ssim is not None:
        print(f"mean_ssim            {report.mean_ssim:.4f}")
    for note in report.notes:
        print(f"note                 {note}")
    print("=" * 70 + "\n")


def _load_reference(path: Optional[str], n_frames: int) -> Optional[FrameSequence]:
    if not path:
        return None
    return load_sequence(path).head(n_frames)


def cmd_restore(cfg) -> int:
    v = cfg.values
    out_dir = cfg.output_path
    seq = load_sequence(v["input"]).head(v["max_frames"])

    pipeline_cfg = cfg.pipeline
    if v["trace"]:
        pipeline_cfg.trace_dir = out_dir / "traces"
    if v["checkpoints"]:
        pipeline_cfg.checkpoint_dir = out_dir / "checkpoints"

    restored, report = run(seq, pipeline_cfg)

    written = restored
    if seq.has_chroma and v["format"] == "png8":
        written = recombine_color(restored, seq)
    write_sequence(written, out_dir, v["format"])

    data: Dict[str, Any] = report.as_dict()
    if v["masks"] or v["reference"]:
        masks = load_masks(v["masks"], restored) if v["masks"] else None
        metrics = evaluate_sequence(restored, masks, _load_reference(v["reference"], len(restored)))
        data["metrics"] = metrics.as_dict()
        _print_metrics(metrics, "RESTORED SEQUENCE METRICS")

    write_key_values(out_dir / "report.txt", data, header=REPORT_HEADER)
    write_key_values(out_dir / "timings.txt", report.timings(), header=("wall-clock seconds, not reproducible",))

    print(f"✅ Restored {len(restored)} frames in {len(report.blocks)} blocks "
          f"({report.total_iterations} iterations) -> {out_dir}")
    return EXIT_OK


def cmd_metrics(cfg) -> int:
    v = cfg.values
    seq = load_sequence(v["input"]).head(v["max_frames"])
    masks = load_masks(v["masks"], seq) if v["masks"] else None
    report = evaluate_sequence(seq, masks, _load_reference(v["reference"], len(seq)))
    _print_metrics(report, f"METRICS: {v['input']}")

    out_dir = cfg.output_path
    if out_dir is not None:
        write_key_values(out_dir / "metrics.txt", report.as_dict(), header=METRICS_HEADER)
        if v["yt_slice"] is not None:
            column = v["yt_slice"]
            path = write_image(extract_yt_slice(seq, column), out_dir / f"yt_slice_col{column:05d}.png")
            logger.info(f"yt slice at column {column} written to {path}")
    return EXIT_OK


def cmd_simulate(cfg) -> int:
    v = cfg.values
    out_dir = cfg.output_path
    params = cfg.turbulence

    if v["input"]:
        source = load_sequence(v["input"])
        clean = source.frames[0] if len(source) == 1 else FrameSequence.from_luma(
            [f.luma for f in source.frames]
        )
    else:
        clean = structured_scene(v["height"], v["width"])

    seed = derive_seed(v["seed"], STREAM_SIMULATOR)
    distorted, clean_seq = synthesize_sequence(clean, v["n_frames"], params, seed=seed)

    write_sequence(distorted, out_dir / "distorted", v["format"])
    write_sequence(clean_seq, out_dir / "clean", v["format"])
    # All-background mask, for background_var on a static scene
    write_image(np.ones(clean_seq.dims), out_dir / "mask.png")

    distorted_psnr = evaluate_sequence(distorted, reference=clean_seq).mean_psnr
    write_key_values(out_dir / "params.txt", {
        "turbulence": vars(params),
        "n_frames": v["n_frames"],
        "height": clean_seq.dims[0],
        "width": clean_seq.dims[1],
        "seed": v["seed"],
        "simulator_seed": seed,
        "source": v["input"] or "structured_scene",
        "mean_psnr_distorted": distorted_psnr if math.isfinite(distorted_psnr) else None,
    }, header=("turbdip simulator parameters",))

    print(f"✅ Synthesised {len(distorted)} frames -> {Path(out_dir)} (distorted/, clean/, mask.png)")
    return EXIT_OK
