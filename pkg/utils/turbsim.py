"""
Synthetic turbulence: y = D x + n with D = Gaussian blur after a random tilt warp.

Tilt fields are smoothed white Gaussian noise rescaled to a maximum
displacement, chained over time by an AR(1) recursion. Channel 0 of a field
is the column (x) displacement, channel 1 the row (y) displacement; frames
are sampled backwards at (i + dy, j + dx) with bilinear interpolation and
edge replication.
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from engine.errors import ConfigError
from utils.seqio import Frame, FrameSequence

logger = logging.getLogger(__name__)


@dataclass
class TurbulenceParams:
    tilt_strength: float = 2.0
    tilt_smoothness: float = 8.0
    blur_sigma: float = 0.7
    noise_sigma: float = 0.02
    temporal_correlation: float = 0.5

    def validate(self) -> "TurbulenceParams":
        values = asdict(self)
        if not all(math.isfinite(v) for v in values.values()):
            raise ConfigError("turbulence parameters must be finite")
        if self.tilt_strength < 0 or self.blur_sigma < 0 or self.noise_sigma < 0:
            raise ConfigError("tilt strength, blur sigma and noise sigma must be >= 0")
        if self.tilt_smoothness <= 0:
            raise ConfigError(f"tilt smoothness must be > 0, got {self.tilt_smoothness}")
        if not 0 <= self.temporal_correlation < 1:
            raise ConfigError(f"temporal correlation must be in [0, 1), got {self.temporal_correlation}")
        return self

    @classmethod
    def none(cls) -> "TurbulenceParams":
        return cls(tilt_strength=0.0, blur_sigma=0.0, noise_sigma=0.0, temporal_correlation=0.0)


def _max_magnitude(field: np.ndarray) -> float:
    return float(np.sqrt(field[0] ** 2 + field[1] ** 2).max())


def random_tilt_field(dims: Tuple[int, int], params: TurbulenceParams,
                      prev_field: Optional[np.ndarray] = None,
                      seed: Union[int, np.random.Generator, None] = None) -> np.ndarray:
    """(2, h, w) displacement field with max magnitude tilt_strength"""
    h, w = dims
    if h < 1 or w < 1:
        raise ConfigError(f"field dims must be positive, got {dims}")
    if params.tilt_strength == 0:
        return np.zeros((2, h, w))

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    white = rng.standard_normal((2, h, w))
    field = np.stack([gaussian_filter(c, params.tilt_smoothness, mode="wrap") for c in white])
    peak = _max_magnitude(field)
    if peak > 0:
        field *= params.tilt_strength / peak

    if prev_field is not None:
        c = params.temporal_correlation
        field = c * prev_field + math.sqrt(1.0 - c * c) * field
        peak = _max_magnitude(field)
        if peak > params.tilt_strength:
            field *= params.tilt_strength / peak
    return field


def warp(image: np.ndarray, tilt: np.ndarray) -> np.ndarray:
    h, w = image.shape
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    coords = np.stack([rows + tilt[1], cols + tilt[0]])
    return map_coordinates(image, coords, order=1, mode="nearest")


def distort_frame(clean: Union[Frame, np.ndarray], tilt: np.ndarray, params: TurbulenceParams,
                  rng: Optional[np.random.Generator] = None) -> Frame:
    image = np.asarray(clean.luma if isinstance(clean, Frame) else clean, dtype=np.float64)
    if tilt.shape != (2,) + image.shape:
        raise ConfigError(f"tilt field {tilt.shape} does not match frame {image.shape}")

    out = warp(image, tilt) if np.any(tilt) else image.copy()
    if params.blur_sigma > 0:
        out = gaussian_filter(out, params.blur_sigma, mode="reflect")
    if params.noise_sigma > 0:
        rng = rng or np.random.default_rng()
        out = out + rng.normal(0.0, params.noise_sigma, size=out.shape)
    return Frame(np.clip(out, 0.0, 1.0))


def synthesize_sequence(clean: Union[Frame, FrameSequence, np.ndarray], n_frames: int,
                        params: TurbulenceParams, seed: int = 0) -> Tuple[FrameSequence, FrameSequence]:
    """
    Distort a static frame (replicated n_frames times) or a moving sequence
    (its first n_frames). Returns aligned (distorted, clean) sequences.
    """
    params.validate()
    if n_frames < 1:
        raise ConfigError(f"n_frames must be >= 1, got {n_frames}")

    if isinstance(clean, FrameSequence):
        if len(clean) < n_frames:
            raise ConfigError(f"clean sequence has {len(clean)} frames, {n_frames} requested")
        clean_frames = [Frame(f.luma.astype(np.float64)) for f in clean.frames[:n_frames]]
    else:
        base = np.asarray(clean.luma if isinstance(clean, Frame) else clean, dtype=np.float64)
        clean_frames = [Frame(base.copy()) for _ in range(n_frames)]

    dims = clean_frames[0].dims
    tilt_rng, noise_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))

    # Tilt chain is serial; everything after it is per frame
    fields: List[np.ndarray] = []
    prev = None
    for _ in range(n_frames):
        prev = random_tilt_field(dims, params, prev_field=prev, seed=tilt_rng)
        fields.append(prev)

    distorted = [distort_frame(f, t, params, noise_rng) for f, t in zip(clean_frames, fields)]
    logger.info(f"Synthesised {n_frames} frames at {dims[0]}x{dims[1]} (seed {seed})")
    return FrameSequence(distorted), FrameSequence(clean_frames)


def structured_scene(height: int = 64, width: int = 64) -> np.ndarray:
    """Static test scene: bars, a disc, a ramp and a checker patch, values in [0.1, 0.9]"""
    rows, cols = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width), indexing="ij")
    scene = 0.2 + 0.3 * cols

    bars = (np.floor(cols * 8) % 2 == 0) & (rows < 0.3)
    scene[bars] = 0.85

    disc = (rows - 0.6) ** 2 + (cols - 0.35) ** 2 < 0.18 ** 2
    scene[disc] = 0.1

    checker = (rows > 0.55) & (cols > 0.65) & ((np.floor(rows * 16) + np.floor(cols * 16)) % 2 == 0)
    scene[checker] = 0.9
    return np.clip(scene, 0.1, 0.9)
