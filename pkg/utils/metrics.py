"""
Quality metrics for restored sequences.

background_variance is the no-reference measure: temporal variance of the
masked background pixels, on the 0-255 scale, averaged over the background.
PSNR and SSIM are the reference metrics for synthetic runs with ground truth.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
from skimage.metrics import structural_similarity

from engine.errors import ConfigError
from utils.seqio import Frame, FrameSequence, MaskSequence

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
BACKGROUND_SCALE = 255.0

FrameLike = Union[Frame, np.ndarray]


@dataclass
class MetricsReport:
    background_var: Optional[float] = None
    n_background_pixels: int = 0
    per_frame_psnr: Optional[List[float]] = None
    mean_psnr: Optional[float] = None
    std_psnr: Optional[float] = None
    per_frame_ssim: Optional[List[float]] = None
    mean_ssim: Optional[float] = None
    biqi_external: Optional[float] = None
    n_frames: int = 0
    notes: List[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "n_frames": self.n_frames,
            "background_var": self.background_var,
            "n_background_pixels": self.n_background_pixels,
            "mean_psnr": self.mean_psnr,
            "std_psnr": self.std_psnr,
            "per_frame_psnr": self.per_frame_psnr,
            "mean_ssim": self.mean_ssim,
            "per_frame_ssim": self.per_frame_ssim,
            "biqi_external": self.biqi_external,
        }


def _luma(frame: FrameLike) -> np.ndarray:
    return np.asarray(frame.luma if isinstance(frame, Frame) else frame, dtype=np.float64)


def background_variance_with_count(seq: FrameSequence, masks: MaskSequence):
    """(mean temporal variance, number of qualifying pixel locations)"""
    if len(masks) != len(seq):
        raise ConfigError(f"{len(masks)} masks for {len(seq)} frames")
    values = seq.luma_stack() * BACKGROUND_SCALE
    mask = masks.stack()
    if mask.shape != values.shape:
        raise ConfigError(f"mask stack {mask.shape} does not match frames {values.shape}")

    counts = mask.sum(axis=0)
    qualifying = counts >= 2
    if not qualifying.any():
        raise ConfigError("no background pixel is covered by the mask in at least 2 frames")

    weights = mask.astype(np.float64)
    safe = np.where(qualifying, counts, 1)
    mean = (values * weights).sum(axis=0) / safe
    var = (weights * (values - mean) ** 2).sum(axis=0) / safe
    return float(var[qualifying].mean()), int(qualifying.sum())


def background_variance(seq: FrameSequence, masks: MaskSequence) -> float:
    return background_variance_with_count(seq, masks)[0]


def psnr(a: FrameLike, b: FrameLike) -> float:
    """10 log10(1 / MSE) on [0,1] data; +inf for identical frames"""
    x, y = _luma(a), _luma(b)
    if x.shape != y.shape:
        raise ConfigError(f"psnr on mismatched shapes {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim(a: FrameLike, b: FrameLike) -> float:
    """Gaussian-window SSIM (11x11, sigma 1.5, K1=0.01, K2=0.03, L=1)"""
    x, y = _luma(a), _luma(b)
    if x.shape != y.shape:
        raise ConfigError(f"ssim on mismatched shapes {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ConfigError(f"frame {x.shape[0]}x{x.shape[1]} is too small for an {SSIM_WINDOW}x{SSIM_WINDOW} window")
    return float(structural_similarity(
        x, y,
        win_size=SSIM_WINDOW,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        data_range=1.0,
        K1=0.01,
        K2=0.03,
    ))


def evaluate_sequence(seq: FrameSequence, masks: Optional[MaskSequence] = None,
                      reference: Optional[FrameSequence] = None) -> MetricsReport:
    report = MetricsReport(n_frames=len(seq))

    if masks is not None:
        report.background_var, report.n_background_pixels = background_variance_with_count(seq, masks)

    if reference is not None:
        if len(reference) != len(seq):
            raise ConfigError(f"reference has {len(reference)} frames, sequence has {len(seq)}")
        report.per_frame_psnr = [psnr(a, b) for a, b in zip(seq.frames, reference.frames)]
        finite = [v for v in report.per_frame_psnr if math.isfinite(v)]
        report.mean_psnr = float(np.mean(finite)) if finite else math.inf
        report.std_psnr = float(np.std(finite)) if finite else 0.0
        if min(seq.dims) >= SSIM_WINDOW:
            report.per_frame_ssim = [ssim(a, b) for a, b in zip(seq.frames, reference.frames)]
            report.mean_ssim = float(np.mean(report.per_frame_ssim))
        else:
            report.notes.append("ssim skipped: frames smaller than the SSIM window")

    return report


def mean_psnr(seq: FrameSequence, reference: FrameSequence) -> float:
    return float(np.mean([psnr(a, b) for a, b in zip(seq.frames, reference.frames)]))
