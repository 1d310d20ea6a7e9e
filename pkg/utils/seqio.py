"""
Image sequence I/O.

All file-format concerns live here: frames come in as 8-bit PNG/PGM/PPM,
are split into BT.601 luma plus colour-difference planes, and go back out
as zero-padded numbered files. The numerical core only ever sees luma.
"""
import glob
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from engine.errors import ConfigError, SequenceIOError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".pgm", ".ppm", ".pnm"}
OUTPUT_FORMATS = {"png8": ".png", "pgm8": ".pgm"}

# BT.601 luma weights and colour-difference scales
KR, KG, KB = 0.299, 0.587, 0.114
CB_SCALE = 0.5 / (1.0 - KB)
CR_SCALE = 0.5 / (1.0 - KR)

PathLike = Union[str, Path]


@dataclass
class Frame:
    luma: np.ndarray
    chroma: Optional[Tuple[np.ndarray, np.ndarray]] = None

    @property
    def height(self) -> int:
        return self.luma.shape[0]

    @property
    def width(self) -> int:
        return self.luma.shape[1]

    @property
    def dims(self) -> Tuple[int, int]:
        return self.luma.shape


@dataclass
class FrameSequence:
    frames: List[Frame]
    frame_rate: Optional[float] = None

    def __post_init__(self):
        if not self.frames:
            raise ConfigError("a frame sequence needs at least one frame")
        dims = self.frames[0].dims
        if any(f.dims != dims for f in self.frames):
            raise ConfigError("all frames of a sequence must share the same dimensions")
        has_chroma = [f.chroma is not None for f in self.frames]
        if any(has_chroma) and not all(has_chroma):
            raise ConfigError("chroma must be present for all frames or for none")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def dims(self) -> Tuple[int, int]:
        return self.frames[0].dims

    @property
    def has_chroma(self) -> bool:
        return self.frames[0].chroma is not None

    def luma_stack(self) -> np.ndarray:
        return np.stack([f.luma for f in self.frames])

    def head(self, n: Optional[int]) -> "FrameSequence":
        if n is None or n >= len(self.frames):
            return self
        if n < 1:
            raise ConfigError(f"frame limit must be >= 1, got {n}")
        return FrameSequence(self.frames[:n], self.frame_rate)

    @classmethod
    def from_luma(cls, stack: Sequence[np.ndarray], frame_rate: Optional[float] = None) -> "FrameSequence":
        return cls([Frame(np.asarray(a, dtype=np.float64)) for a in stack], frame_rate)


@dataclass
class MaskSequence:
    """Boolean masks, True = background pixel"""

    masks: List[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.masks)

    def stack(self) -> np.ndarray:
        return np.stack(self.masks)


# -- colour -------------------------------------------------------------------

def rgb_to_luma_chroma(rgb: np.ndarray) -> Tuple[np.ndarray, Tuple[np.ndarray, np.ndarray]]:
    """rgb in [0,1], shape (h, w, 3) -> luma, (Cb, Cr) centred on 0"""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = KR * r + KG * g + KB * b
    return y, ((b - y) * CB_SCALE, (r - y) * CR_SCALE)


def luma_chroma_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    r = y + cr / CR_SCALE
    b = y + cb / CB_SCALE
    g = (y - KR * r - KB * b) / KG
    return np.stack([r, g, b], axis=-1)


# -- loading ------------------------------------------------------------------

def _match_files(path_pattern: PathLike) -> List[Path]:
    path = Path(path_pattern)
    if path.is_dir():
        files = [p for p in path.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES]
    elif path.is_file():
        files = [path]
    else:
        files = [Path(p) for p in glob.glob(str(path_pattern)) if Path(p).is_file()]
    return sorted(files, key=lambda p: p.name)


def _read_image(path: Path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
    except (UnidentifiedImageError, OSError) as e:
        raise SequenceIOError(f"undecodable image file ({e.__class__.__name__})", str(path)) from e
    return img


def _decode_frame(path: Path) -> Frame:
    img = _read_image(path)
    if img.mode in ("I", "I;16", "I;16B", "I;16L", "F"):
        raise SequenceIOError(f"only 8-bit images are supported, got mode {img.mode}", str(path))

    if img.mode in ("L", "LA", "1"):
        luma = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
        return Frame(luma)

    rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    luma, chroma = rgb_to_luma_chroma(rgb)
    return Frame(luma, chroma)


def load_sequence(path_pattern: PathLike, frame_rate: Optional[float] = None) -> FrameSequence:
    """
    Load every image matched by a directory or glob, ordered by filename.

    Raises:
        SequenceIOError: nothing matched, a file is undecodable or not 8-bit,
            or frames differ in size (each names the offending file)
    """
    files = _match_files(path_pattern)
    if not files:
        raise SequenceIOError("no files matched", str(path_pattern))

    frames: List[Frame] = []
    for path in files:
        frame = _decode_frame(path)
        if frames and frame.dims != frames[0].dims:
            raise SequenceIOError(
                f"mixed dimensions ({frame.height}x{frame.width} vs {frames[0].height}x{frames[0].width})",
                str(path),
            )
        frames.append(frame)

    if len({f.chroma is None for f in frames}) > 1:
        # Mixed gray/colour inputs: keep luma only
        logger.warning(f"Mixed grayscale and colour frames in {path_pattern}; dropping chroma")
        frames = [Frame(f.luma) for f in frames]

    logger.info(f"Loaded {len(frames)} frames ({frames[0].height}x{frames[0].width}) from {path_pattern}")
    return FrameSequence(frames, frame_rate)


def load_masks(path: PathLike, sequence: FrameSequence) -> MaskSequence:
    """Mask pixels >= 128 are background. A single mask is broadcast to every frame."""
    files = _match_files(path)
    if not files:
        raise SequenceIOError("no mask files matched", str(path))
    if len(files) not in (1, len(sequence)):
        raise SequenceIOError(
            f"{len(files)} masks for {len(sequence)} frames (need 1 or {len(sequence)})", str(path)
        )

    masks = []
    for f in files:
        img = _read_image(f)
        if img.mode not in ("L", "1", "P"):
            raise SequenceIOError(f"mask must be single-channel, got mode {img.mode}", str(f))
        mask = np.asarray(img.convert("L")) >= 128
        if mask.shape != sequence.dims:
            raise SequenceIOError(
                f"mask {mask.shape[0]}x{mask.shape[1]} does not match frames "
                f"{sequence.dims[0]}x{sequence.dims[1]}",
                str(f),
            )
        masks.append(mask)

    if len(masks) == 1:
        masks = masks * len(sequence)
    return MaskSequence(masks)


# -- writing ------------------------------------------------------------------

def quantize(values: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_image(array: np.ndarray, path: PathLike, fmt: str = "png8") -> Path:
    """Write one [0,1] gray (h, w) or RGB (h, w, 3) array"""
    path = Path(path)
    img = Image.fromarray(quantize(array))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        img.save(path, format="PNG" if fmt == "png8" else "PPM")
    except OSError as e:
        raise SequenceIOError(f"could not write image ({e})", str(path)) from e
    return path


def write_sequence(seq: FrameSequence, out_dir: PathLike, fmt: str = "png8") -> List[Path]:
    """
    One file per frame, frame_00000.<ext>, values round(v * 255) clamped.
    PNG output carries colour when the sequence has chroma; PGM is luma only.
    """
    if fmt not in OUTPUT_FORMATS:
        raise ConfigError(f"unknown output format {fmt!r} (choose from {', '.join(OUTPUT_FORMATS)})")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise SequenceIOError(f"cannot create output directory ({e})", str(out_dir)) from e

    written = []
    for k, frame in enumerate(seq.frames):
        data = frame.luma
        if fmt == "png8" and frame.chroma is not None:
            data = luma_chroma_to_rgb(frame.luma, *frame.chroma)
        written.append(write_image(data, out_dir / f"frame_{k:05d}{OUTPUT_FORMATS[fmt]}", fmt))

    logger.info(f"Wrote {len(written)} frames to {out_dir}")
    return written


def recombine_color(restored: FrameSequence, original: FrameSequence) -> FrameSequence:
    """Restored luma with the original's chroma planes, frame-aligned"""
    if len(restored) != len(original):
        raise ConfigError(f"length mismatch: {len(restored)} restored vs {len(original)} original frames")
    if restored.dims != original.dims:
        raise ConfigError(f"dimension mismatch: {restored.dims} vs {original.dims}")
    if not original.has_chroma:
        raise ConfigError("original sequence carries no chroma to recombine")

    frames = [Frame(r.luma, o.chroma) for r, o in zip(restored.frames, original.frames)]
    return FrameSequence(frames, original.frame_rate)


def extract_yt_slice(seq: FrameSequence, column: int) -> np.ndarray:
    """Rows-by-time image at a fixed column: (height, n_frames)"""
    if not 0 <= column < seq.dims[1]:
        raise ConfigError(f"column {column} outside frame width {seq.dims[1]}")
    return np.stack([f.luma[:, column] for f in seq.frames], axis=1)
