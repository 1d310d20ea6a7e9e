"""
Single-block fitting: Adam on (z, BatchNorm affine) under TV regularisation,
stopped by windowed-moving-variance early stopping.

The returned restoration is the output at the variance minimum; the final
parameters are kept separately for warm-starting the next block.
"""
import csv
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Deque, List, Optional, Tuple, Union

import numpy as np
import torch

from engine.errors import ConfigError, NumericalError
from engine.generator import HourglassConfig, ParamVector, evaluate, init_generator
from engine.mosaic import Mosaic
from engine.regularizers import tv  # noqa: F401  (re-exported)
from engine.warmstart import InitKind, InitSpec

logger = logging.getLogger(__name__)


@dataclass
class OptimizerConfig:
    lam: float = 0.1
    max_epoch: int = 200
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    tv_reduction: str = "sum"

    def validate(self) -> "OptimizerConfig":
        if not math.isfinite(self.lam) or self.lam < 0:
            raise ConfigError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.max_epoch < 1:
            raise ConfigError(f"max epoch must be >= 1, got {self.max_epoch}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning rate must be > 0, got {self.learning_rate}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1) or self.adam_eps <= 0:
            raise ConfigError("adam betas must be in [0, 1) and eps > 0")
        if self.tv_reduction not in ("mean", "sum"):
            raise ConfigError(f"tv_reduction must be 'mean' or 'sum', got {self.tv_reduction!r}")
        return self


@dataclass
class EsConfig:
    patience: int = 50
    patience_start: int = 50
    alpha: float = 0.1
    window: int = 25

    def validate(self, max_epoch: Optional[int] = None) -> "EsConfig":
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.patience_start < 0:
            raise ConfigError(f"patience start must be >= 0, got {self.patience_start}")
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.window < 1:
            raise ConfigError(f"ES window must be >= 1, got {self.window}")
        if max_epoch is not None and self.patience_start > max_epoch:
            raise ConfigError(f"patience start {self.patience_start} exceeds max epoch {max_epoch}")
        return self


# -- Adam ---------------------------------------------------------------------

@dataclass
class AdamMoments:
    m: torch.Tensor
    v: torch.Tensor

    @classmethod
    def zeros_like(cls, params: ParamVector) -> "AdamMoments":
        return cls(torch.zeros_like(params), torch.zeros_like(params))


def adam_step(params: ParamVector, grad: ParamVector, moments: AdamMoments, t: int,
              cfg: OptimizerConfig) -> Tuple[ParamVector, AdamMoments]:
    """Bias-corrected Adam update, t counts from 1"""
    if params.shape != grad.shape:
        raise ConfigError(f"params {tuple(params.shape)} and grad {tuple(grad.shape)} differ in length")
    if not torch.isfinite(grad).all():
        raise NumericalError("non-finite gradient", iteration=t)

    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    m = b1 * moments.m + (1 - b1) * grad
    v = b2 * moments.v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    updated = params - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps)
    return updated, AdamMoments(m, v)


# -- ES-WMV -------------------------------------------------------------------

class EsDecision(Enum):
    CONTINUE = "continue"
    STOP = "stop"


@dataclass
class EsSnapshot:
    iteration: int
    params: Optional[ParamVector]
    output: Optional[np.ndarray]


@dataclass
class EsState:
    """Ring of recent outputs, smoothed variance curve and the best iterate so far"""

    cfg: EsConfig
    ring: Deque[np.ndarray] = field(init=False)
    raw_var: Optional[float] = None
    smooth_var: Optional[float] = None
    best_var: float = math.inf
    best_iter: Optional[int] = None
    best_snapshot: Optional[EsSnapshot] = None
    since_best: int = 0
    last_iter: Optional[int] = None
    raw_trace: List[float] = field(default_factory=list)
    smooth_trace: List[float] = field(default_factory=list)
    best_trace: List[float] = field(default_factory=list)

    def __post_init__(self):
        self.ring = deque(maxlen=self.cfg.window)


def es_observe(es: EsState, smooth_var: Optional[float], iteration: int, cfg: EsConfig,
               params: Optional[ParamVector] = None, output: Optional[np.ndarray] = None) -> EsDecision:
    """
    Best-minimum tracking on an already smoothed variance value.

    Ties are not improvements. Tracking starts at patience_start; before that
    (or before the first full window) the answer is always CONTINUE.
    """
    if smooth_var is None or iteration < cfg.patience_start:
        es.best_trace.append(es.best_var)
        return EsDecision.CONTINUE

    if smooth_var < es.best_var:
        es.best_var = smooth_var
        es.best_iter = iteration
        es.best_snapshot = EsSnapshot(
            iteration,
            None if params is None else params.detach().clone(),
            None if output is None else np.array(output, copy=True),
        )
    es.since_best = iteration - es.best_iter
    es.best_trace.append(es.best_var)
    return EsDecision.STOP if es.since_best >= cfg.patience else EsDecision.CONTINUE


def es_update(es: EsState, output: Union[np.ndarray, Mosaic], params: Optional[ParamVector],
              iteration: int, cfg: EsConfig) -> EsDecision:
    if es.last_iter is not None and iteration != es.last_iter + 1:
        raise ConfigError(f"ES iterations must advance by 1 (got {iteration} after {es.last_iter})")
    es.last_iter = iteration

    frame = output.data if isinstance(output, Mosaic) else np.asarray(output)
    es.ring.append(np.array(frame, dtype=np.float64, copy=True))

    if len(es.ring) == cfg.window:
        es.raw_var = float(np.var(np.stack(es.ring), axis=0).mean())
        if es.smooth_var is None:
            es.smooth_var = es.raw_var
        else:
            es.smooth_var = cfg.alpha * es.raw_var + (1 - cfg.alpha) * es.smooth_var
    es.raw_trace.append(math.nan if es.raw_var is None else es.raw_var)
    es.smooth_trace.append(math.nan if es.smooth_var is None else es.smooth_var)

    return es_observe(es, es.smooth_var, iteration, cfg, params=params, output=frame)


# -- fit_block ----------------------------------------------------------------

@dataclass
class BlockFitResult:
    restored_mosaic: np.ndarray
    final_params: ParamVector
    best_params: ParamVector
    stop_iter: int
    best_iter: int
    loss_trace: List[float]
    var_trace: List[float]
    raw_var_trace: List[float] = field(default_factory=list)
    best_var_trace: List[float] = field(default_factory=list)
    init_kind: str = "fresh"
    frozen_checksum: str = ""
    bn_stats: Optional[np.ndarray] = None
    wall_time: float = 0.0

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1]


Monitor = Callable[[int, np.ndarray], None]


def fit_block(init, target: Union[Mosaic, np.ndarray], gen_cfg: HourglassConfig,
              opt_cfg: OptimizerConfig, es_cfg: EsConfig, seed: int,
              latent_seed: Optional[int] = None, dtype: torch.dtype = torch.float32,
              block_index: Optional[int] = None, monitor: Optional[Monitor] = None) -> BlockFitResult:
    """
    Fit the generator to one mosaic.

    Args:
        init: None / fresh InitSpec for a random start, a ParamVector, or a
            Copy/Predicted InitSpec
        target: mosaic to fit (dims divisible by 2**scales)
        seed: frozen-weight seed; must be shared by blocks that warm-start
            from each other
        latent_seed: seed for a fresh-random z (defaults to seed)
        monitor: called with (iteration, output) after every forward pass
    """
    opt_cfg.validate()
    es_cfg.validate(opt_cfg.max_epoch)
    target_arr = target.data if isinstance(target, Mosaic) else np.asarray(target, dtype=np.float64)
    if target_arr.ndim != 2 or not np.isfinite(target_arr).all():
        raise ConfigError("fit target must be a finite 2-D mosaic")

    started = time.perf_counter()
    state = init_generator(gen_cfg, target_arr.shape, seed, latent_seed=latent_seed, dtype=dtype)
    init_kind, init_params = _resolve_init(init)
    if init_params is not None:
        state.set_params(init_params)
    target_t = torch.as_tensor(target_arr, dtype=dtype)

    checksum = state.frozen_checksum()
    es = EsState(es_cfg)
    params = state.get_params()
    moments = AdamMoments.zeros_like(params)
    loss_trace: List[float] = []
    last_output: Optional[np.ndarray] = None

    iteration = 0
    for iteration in range(1, opt_cfg.max_epoch + 1):
        try:
            loss, grad, output = evaluate(state, target_t, opt_cfg.lam, opt_cfg.tv_reduction)
            updated, moments = adam_step(params, grad, moments, iteration, opt_cfg)
        except NumericalError as e:
            e.iteration = iteration
            e.loss_trace = loss_trace
            e.block_index = block_index
            logger.error(f"Block {block_index}: {e}")
            raise

        loss_trace.append(loss)
        last_output = output.cpu().numpy()
        if monitor is not None:
            monitor(iteration, last_output)

        decision = es_update(es, last_output, params, iteration, es_cfg)
        if iteration % 25 == 0:
            logger.debug(f"Block {block_index} iter {iteration}: loss={loss:.6g} smooth_var={es.smooth_var}")

        if decision is EsDecision.STOP or iteration == opt_cfg.max_epoch:
            break
        params = updated
        state.set_params(params)

    if state.frozen_checksum() != checksum:
        raise NumericalError("frozen weights changed during fitting", block_index=block_index)

    snap = es.best_snapshot
    if snap is None:
        # ES never started tracking (max_epoch too short): fall back to the last iterate
        logger.warning(f"Block {block_index}: early stopping never engaged, using the last iterate")
        snap = EsSnapshot(iteration, params.clone(), last_output)

    return BlockFitResult(
        restored_mosaic=snap.output,
        final_params=params.clone(),
        best_params=snap.params,
        stop_iter=iteration,
        best_iter=snap.iteration,
        loss_trace=loss_trace,
        var_trace=list(es.smooth_trace),
        raw_var_trace=list(es.raw_trace),
        best_var_trace=list(es.best_trace),
        init_kind=init_kind,
        frozen_checksum=checksum,
        bn_stats=state.batchnorm_stats(),
        wall_time=time.perf_counter() - started,
    )


def _resolve_init(init) -> Tuple[str, Optional[ParamVector]]:
    if init is None:
        return InitKind.FRESH.value, None
    if isinstance(init, InitSpec):
        return init.kind.value, init.params
    if isinstance(init, (torch.Tensor, np.ndarray)):
        return InitKind.COPY.value, torch.as_tensor(init)
    raise ConfigError(f"unsupported init {type(init).__name__}")


def write_trace_csv(result: BlockFitResult, path: Union[str, Path]) -> Path:
    """iter,loss,raw_var,smooth_var; NaN before the first full variance window"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iter", "loss", "raw_var", "smooth_var"])
        for i, (loss, raw, smooth) in enumerate(zip(result.loss_trace, result.raw_var_trace,
                                                     result.var_trace), start=1):
            writer.writerow([i, repr(loss), repr(raw), repr(smooth)])
    return path
