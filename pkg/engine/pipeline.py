"""
Sequence restoration pipeline.

Frames are taken T at a time by a sliding window, interlaced into a mosaic,
padded for the hourglass, fitted, then cropped and de-interlaced. Blocks are
strictly sequential: each one's initial trainables are predicted from the
final parameters of the blocks before it.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from engine.errors import ConfigError, NumericalError, SequenceTooShortError
from engine.generator import HourglassConfig, init_generator, save_checkpoint
from engine.mosaic import Mosaic, MosaicGrid, grid_for_block_size, shuffle_block, unshuffle_array
from engine.optimize import BlockFitResult, EsConfig, OptimizerConfig, fit_block, write_trace_csv
from engine.warmstart import InitSpec, ParamHistory, predict_init
from utils.seqio import FrameSequence

logger = logging.getLogger(__name__)

# Seed streams derived from the master seed
STREAM_WEIGHTS = 0
STREAM_LATENT = 1
STREAM_SIMULATOR = 2


def derive_seed(master: int, stream: int, index: int = 0) -> int:
    """
    32-bit seed for (stream, index) under a master seed.

    Stream 0 seeds the frozen weights and is shared by every block so a warm
    start lands on the same network; stream 1 seeds each block's fresh latent
    and BatchNorm state; stream 2 seeds the simulator.
    """
    if master < 0 or stream < 0 or index < 0:
        raise ConfigError(f"seeds must be non-negative, got ({master}, {stream}, {index})")
    return int(np.random.SeedSequence([master, stream, index]).generate_state(1, dtype=np.uint32)[0])


@dataclass
class PipelineConfig:
    block_size: int = 5
    stride: Optional[int] = None
    grid: Optional[MosaicGrid] = None
    gen_cfg: HourglassConfig = field(default_factory=HourglassConfig)
    opt_cfg: OptimizerConfig = field(default_factory=OptimizerConfig)
    es_cfg: EsConfig = field(default_factory=EsConfig)
    seed: int = 0
    warm_copy_block1: bool = False
    trace_dir: Optional[Path] = None
    checkpoint_dir: Optional[Path] = None

    @property
    def effective_stride(self) -> int:
        return self.block_size if self.stride is None else self.stride

    @property
    def effective_grid(self) -> MosaicGrid:
        return self.grid if self.grid is not None else grid_for_block_size(self.block_size)

    def validate(self, n_frames: Optional[int] = None) -> "PipelineConfig":
        if self.block_size < 1:
            raise ConfigError(f"block size must be >= 1, got {self.block_size}")
        if not 1 <= self.effective_stride <= self.block_size:
            raise ConfigError(f"stride must be in [1, {self.block_size}], got {self.effective_stride}")
        if self.effective_grid.block_size != self.block_size:
            raise ConfigError(f"grid {self.effective_grid} does not hold {self.block_size} frames")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        self.gen_cfg.validate()
        self.opt_cfg.validate()
        self.es_cfg.validate(self.opt_cfg.max_epoch)
        if n_frames is not None and n_frames < self.block_size:
            raise SequenceTooShortError(n_frames, self.block_size)
        return self


# -- scheduling ---------------------------------------------------------------

@dataclass(frozen=True)
class BlockSpan:
    index: int
    start: int
    stop: int
    emit_start: int
    emit_stop: int

    @property
    def emit_range(self) -> range:
        return range(self.emit_start, self.emit_stop)


@dataclass
class BlockSchedule:
    n_frames: int
    block_size: int
    stride: int
    spans: List[BlockSpan]

    def __len__(self) -> int:
        return len(self.spans)

    def __iter__(self):
        return iter(self.spans)

    @property
    def starts(self) -> List[int]:
        return [s.start for s in self.spans]


def schedule_blocks(n_frames: int, block_size: int, stride: int) -> BlockSchedule:
    """
    Block starts at 0, S, 2S, ... with the last start clamped to n - T.
    Each block emits only the frames no earlier block emitted.
    """
    if block_size < 1 or not 1 <= stride <= block_size:
        raise ConfigError(f"need 1 <= stride <= block size, got stride {stride}, block {block_size}")
    if n_frames < block_size:
        raise SequenceTooShortError(n_frames, block_size)

    starts = list(range(0, n_frames - block_size + 1, stride))
    if starts[-1] + block_size < n_frames:
        starts.append(n_frames - block_size)

    spans = []
    emitted = 0
    for index, start in enumerate(starts):
        stop = start + block_size
        spans.append(BlockSpan(index, start, stop, max(start, emitted), stop))
        emitted = stop
    return BlockSchedule(n_frames, block_size, stride, spans)


# -- spatial padding ----------------------------------------------------------

@dataclass(frozen=True)
class CropRecord:
    height: int
    width: int
    pad_bottom: int = 0
    pad_right: int = 0

    @property
    def is_identity(self) -> bool:
        return self.pad_bottom == 0 and self.pad_right == 0


def pad_for_scales(mosaic: Union[Mosaic, np.ndarray], scales: int) -> Tuple[np.ndarray, CropRecord]:
    """Reflect-pad bottom/right up to the next multiple of 2**scales"""
    data = mosaic.data if isinstance(mosaic, Mosaic) else np.asarray(mosaic)
    h, w = data.shape
    multiple = 2 ** scales
    pad_bottom, pad_right = (-h) % multiple, (-w) % multiple
    record = CropRecord(h, w, pad_bottom, pad_right)
    if record.is_identity:
        return data, record
    # numpy falls back to edge replication along singleton axes
    return np.pad(data, ((0, pad_bottom), (0, pad_right)), mode="reflect"), record


def crop(padded: np.ndarray, record: CropRecord) -> np.ndarray:
    return padded[:record.height, :record.width]


# -- reporting ----------------------------------------------------------------

@dataclass
class BlockReport:
    index: int
    start: int
    stop: int
    emit_start: int
    emit_stop: int
    init_kind: str
    init_sources: List[int]
    latent_seed: int
    stop_iter: int
    best_iter: int
    final_loss: float
    best_var: Optional[float]
    frozen_checksum: str
    loss_trace: List[float]
    var_trace: List[float]
    wall_time: float = 0.0

    def as_dict(self) -> Dict[str, Any]:
        return {
            "start": self.start,
            "stop": self.stop,
            "emit": f"{self.emit_start}-{self.emit_stop}",
            "init": self.init_kind,
            "init_sources": self.init_sources,
            "latent_seed": self.latent_seed,
            "stop_iter": self.stop_iter,
            "best_iter": self.best_iter,
            "final_loss": self.final_loss,
            "best_var": self.best_var,
            "frozen_sha256": self.frozen_checksum,
            "loss_trace": self.loss_trace,
            "var_trace": self.var_trace,
        }


@dataclass
class RunReport:
    n_frames: int
    height: int
    width: int
    block_size: int
    stride: int
    grid: str
    seed: int
    weight_seed: int
    settings: Dict[str, Any] = field(default_factory=dict)
    blocks: List[BlockReport] = field(default_factory=list)

    @property
    def total_iterations(self) -> int:
        return sum(b.stop_iter for b in self.blocks)

    def as_dict(self) -> Dict[str, Any]:
        """Deterministic fields only; wall times live in timings()"""
        return {
            "run": {
                "n_frames": self.n_frames,
                "height": self.height,
                "width": self.width,
                "block_size": self.block_size,
                "stride": self.stride,
                "grid": self.grid,
                "seed": self.seed,
                "weight_seed": self.weight_seed,
                "n_blocks": len(self.blocks),
                "total_iterations": self.total_iterations,
            },
            "config": self.settings,
            "block": {str(b.index): b.as_dict() for b in self.blocks},
        }

    def timings(self) -> Dict[str, Any]:
        return {
            "total_seconds": sum(b.wall_time for b in self.blocks),
            "block": {str(b.index): {"seconds": b.wall_time} for b in self.blocks},
        }


def _config_summary(cfg: PipelineConfig) -> Dict[str, Any]:
    opt, es, gen = cfg.opt_cfg, cfg.es_cfg, cfg.gen_cfg
    return {
        "lambda": opt.lam,
        "learning_rate": opt.learning_rate,
        "max_epoch": opt.max_epoch,
        "tv_reduction": opt.tv_reduction,
        "patience": es.patience,
        "patience_start": es.patience_start,
        "alpha": es.alpha,
        "es_window": es.window,
        "scales": gen.scales,
        "channels": gen.channels,
        "skip_channels": gen.skip_channels,
        "latent_channels": gen.latent_channels,
        "warm_copy_block1": cfg.warm_copy_block1,
    }


# -- run ----------------------------------------------------------------------

def _initial_spec(history: ParamHistory, cfg: PipelineConfig) -> InitSpec:
    # Block 1 starts fresh unless asked to copy block 0
    if len(history) == 1 and not cfg.warm_copy_block1:
        return InitSpec.fresh()
    return predict_init(history)


def _save_block_checkpoint(cfg: PipelineConfig, span: BlockSpan, dims: Tuple[int, int],
                           weight_seed: int, latent_seed: int, result: BlockFitResult):
    state = init_generator(cfg.gen_cfg, dims, weight_seed, latent_seed=latent_seed)
    state.set_params(result.final_params)
    if result.bn_stats is not None:
        state.set_batchnorm_stats(result.bn_stats)
    path = Path(cfg.checkpoint_dir) / f"block_{span.index:04d}.ckpt"
    save_checkpoint(path, state, latent_seed=latent_seed,
                    extra={"block": span.index, "start": span.start, "stop": span.stop})
    logger.debug(f"Checkpoint for block {span.index} written to {path}")


def run(seq: FrameSequence, cfg: PipelineConfig) -> Tuple[FrameSequence, RunReport]:
    """
    Restore a whole sequence.

    Returns:
        (restored luma sequence, RunReport) with one BlockReport per
        scheduled block, in processing order
    """
    cfg.validate(len(seq))
    grid = cfg.effective_grid
    schedule = schedule_blocks(len(seq), cfg.block_size, cfg.effective_stride)
    luma = seq.luma_stack()
    height, width = seq.dims

    weight_seed = derive_seed(cfg.seed, STREAM_WEIGHTS)
    report = RunReport(
        n_frames=len(seq), height=height, width=width, block_size=cfg.block_size,
        stride=cfg.effective_stride, grid=str(grid), seed=cfg.seed, weight_seed=weight_seed,
        settings=_config_summary(cfg),
    )
    logger.info(
        f"Restoring {len(seq)} frames ({height}x{width}) in {len(schedule)} blocks "
        f"of {cfg.block_size} (stride {cfg.effective_stride}, grid {grid})"
    )

    restored: List[Optional[np.ndarray]] = [None] * len(seq)
    history = ParamHistory()
    for span in schedule:
        mosaic = shuffle_block(list(luma[span.start:span.stop]), grid)
        padded, record = pad_for_scales(mosaic, cfg.gen_cfg.scales)

        init = _initial_spec(history, cfg)
        sources = history.block_indices if init.params is not None else []
        latent_seed = derive_seed(cfg.seed, STREAM_LATENT, span.index)
        result = fit_block(init, padded, cfg.gen_cfg, cfg.opt_cfg, cfg.es_cfg,
                           seed=weight_seed, latent_seed=latent_seed, block_index=span.index)

        frames = unshuffle_array(crop(result.restored_mosaic, record), grid)
        for t in span.emit_range:
            restored[t] = np.clip(frames[t - span.start].astype(np.float64), 0.0, 1.0)
        history.push(span.index, result.final_params)

        if cfg.trace_dir is not None:
            write_trace_csv(result, Path(cfg.trace_dir) / f"block_{span.index:04d}.csv")
        if cfg.checkpoint_dir is not None:
            _save_block_checkpoint(cfg, span, padded.shape, weight_seed, latent_seed, result)

        report.blocks.append(BlockReport(
            index=span.index, start=span.start, stop=span.stop,
            emit_start=span.emit_start, emit_stop=span.emit_stop,
            init_kind=result.init_kind, init_sources=sources, latent_seed=latent_seed,
            stop_iter=result.stop_iter, best_iter=result.best_iter, final_loss=result.final_loss,
            best_var=_best_var(result), frozen_checksum=result.frozen_checksum,
            loss_trace=result.loss_trace, var_trace=result.var_trace, wall_time=result.wall_time,
        ))
        logger.info(
            f"Block {span.index} [{span.start},{span.stop}) init={result.init_kind} "
            f"stop={result.stop_iter} best={result.best_iter} loss={result.final_loss:.6g} "
            f"({result.wall_time:.1f}s)"
        )

    missing = [t for t, f in enumerate(restored) if f is None]
    if missing:
        raise NumericalError(f"schedule left frames unwritten: {missing}")
    return FrameSequence.from_luma(restored, seq.frame_rate), report


def _best_var(result: BlockFitResult) -> Optional[float]:
    finite = [v for v in result.best_var_trace if np.isfinite(v)]
    return finite[-1] if finite else None


def iterations_to_reach(loss_trace: List[float], target: float) -> Optional[int]:
    """First 1-based iteration whose loss is <= target, or None"""
    for i, loss in enumerate(loss_trace, start=1):
        if loss <= target:
            return i
    return None
