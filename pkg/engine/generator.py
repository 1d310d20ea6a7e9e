"""
Untrained hourglass generator G(z) with frozen convolutions.

Only the latent input z and the BatchNorm affine parameters are trainable;
every convolution kernel and bias is drawn once from the seed and never
touched again. The trainable set is exposed as one flat ParamVector so the
optimizer and the warm-start predictor can work on plain vectors.

ParamVector layout:
    z (latent_channels * H * W, row-major),
    then every BatchNorm gamma,
    then every BatchNorm beta,
with BatchNorm layers ordered encoder levels (shallow to deep), skip
branches (shallow to deep), decoder levels (shallow to deep).
"""
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils import parameters_to_vector, vector_to_parameters

from engine.errors import ConfigError, NumericalError, SequenceIOError
from engine.regularizers import tv

logger = logging.getLogger(__name__)

ParamVector = torch.Tensor

CHECKPOINT_MAGIC = b"TURBDIP-CKPT 1\n"
LATENT_INIT_SCALE = 0.1


@dataclass
class HourglassConfig:
    scales: int = 3
    channels: int = 32
    skip_channels: int = 4
    kernel: int = 3
    latent_channels: int = 16
    activation: str = "leaky_relu"
    negative_slope: float = 0.1
    upsample: str = "bilinear"
    output_nonlinearity: str = "sigmoid"

    def validate(self) -> "HourglassConfig":
        if self.scales < 1:
            raise ConfigError(f"scales must be >= 1, got {self.scales}")
        if self.channels < 1 or self.latent_channels < 1:
            raise ConfigError("channels and latent_channels must be positive")
        if self.skip_channels < 0:
            raise ConfigError(f"skip_channels must be >= 0, got {self.skip_channels}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"kernel must be odd and positive, got {self.kernel}")
        if self.activation != "leaky_relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if self.upsample != "bilinear":
            raise ConfigError(f"unsupported upsampling {self.upsample!r}")
        if self.output_nonlinearity != "sigmoid":
            raise ConfigError(f"unsupported output nonlinearity {self.output_nonlinearity!r}")
        return self

    @property
    def multiple(self) -> int:
        """Mosaic dims must be divisible by this"""
        return 2 ** self.scales


class ConvBlock(nn.Module):
    """conv -> BatchNorm -> LeakyReLU"""

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int, slope: float):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, kernel, stride=stride, padding=kernel // 2)
        self.bn = nn.BatchNorm2d(c_out)
        self.act = nn.LeakyReLU(slope)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(self.bn(self.conv(x)))


class Hourglass(nn.Module):
    """Encoder/decoder with per-scale skip branches and a sigmoid 1x1 head"""

    def __init__(self, cfg: HourglassConfig):
        super().__init__()
        self.cfg = cfg
        k, slope = cfg.kernel, cfg.negative_slope

        self.down = nn.ModuleList()
        c_in = cfg.latent_channels
        for _ in range(cfg.scales):
            self.down.append(ConvBlock(c_in, cfg.channels, k, 2, slope))
            c_in = cfg.channels

        self.skip = nn.ModuleList()
        if cfg.skip_channels:
            c_in = cfg.latent_channels
            for _ in range(cfg.scales):
                self.skip.append(ConvBlock(c_in, cfg.skip_channels, 1, 1, slope))
                c_in = cfg.channels

        self.up = nn.ModuleList(
            ConvBlock(cfg.channels + cfg.skip_channels, cfg.channels, k, 1, slope)
            for _ in range(cfg.scales)
        )
        self.head = nn.Conv2d(cfg.channels, 1, 1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        levels: List[torch.Tensor] = []
        x = z
        for block in self.down:
            levels.append(x)
            x = block(x)

        for s in reversed(range(self.cfg.scales)):
            x = F.interpolate(x, size=levels[s].shape[-2:], mode="bilinear", align_corners=False)
            if self.skip:
                x = torch.cat([self.skip[s](levels[s]), x], dim=1)
            x = self.up[s](x)
        return torch.sigmoid(self.head(x))


class GeneratorState:
    """
    Network, latent input and the frozen/trainable split for one mosaic size.

    Args:
        config: hourglass architecture
        mosaic_dims: (H_m, W_m) of the target mosaic, divisible by 2**scales
        seed: draws the frozen convolution weights
        latent_seed: draws z (defaults to seed)
        dtype: torch.float32 for fitting, torch.float64 for gradient checks
    """

    def __init__(self, config: HourglassConfig, mosaic_dims: Tuple[int, int], seed: int,
                 latent_seed: Optional[int] = None, dtype: torch.dtype = torch.float32):
        self.config = config.validate()
        self.mosaic_dims = _check_dims(mosaic_dims, config)
        self.seed = int(seed)
        self.dtype = dtype

        self.net = Hourglass(config).to(dtype)
        self.net.train()
        self.z = nn.Parameter(torch.zeros((1, config.latent_channels) + self.mosaic_dims, dtype=dtype))

        self._init_frozen(self.seed)
        self.reset_trainables(self.seed if latent_seed is None else latent_seed)

    # -- parameter partition -------------------------------------------------

    def batchnorms(self) -> List[nn.BatchNorm2d]:
        return [m for m in self.net.modules() if isinstance(m, nn.BatchNorm2d)]

    def convolutions(self) -> List[nn.Conv2d]:
        return [m for m in self.net.modules() if isinstance(m, nn.Conv2d)]

    def trainables(self) -> List[nn.Parameter]:
        bns = self.batchnorms()
        return [self.z] + [bn.weight for bn in bns] + [bn.bias for bn in bns]

    def frozen_parameters(self) -> Iterator[torch.Tensor]:
        for conv in self.convolutions():
            yield conv.weight
            if conv.bias is not None:
                yield conv.bias

    @property
    def trainable_count(self) -> int:
        return sum(p.numel() for p in self.trainables())

    @property
    def frozen_count(self) -> int:
        return sum(p.numel() for p in self.frozen_parameters())

    def _init_frozen(self, seed: int):
        # Drawn in float64 so float32 and float64 states share the same weights
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for conv in self.convolutions():
                fan_in = conv.in_channels // conv.groups * conv.kernel_size[0] * conv.kernel_size[1]
                w = torch.randn(conv.weight.shape, generator=gen, dtype=torch.float64)
                conv.weight.copy_(w * np.sqrt(2.0 / fan_in))
                if conv.bias is not None:
                    conv.bias.zero_()
        for p in self.frozen_parameters():
            p.requires_grad_(False)

    def reset_trainables(self, latent_seed: int):
        """Fresh-random init: z ~ U[0, 0.1], gamma = 1, beta = 0"""
        gen = torch.Generator().manual_seed(int(latent_seed))
        with torch.no_grad():
            z = torch.rand(self.z.shape, generator=gen, dtype=torch.float64) * LATENT_INIT_SCALE
            self.z.copy_(z)
            for bn in self.batchnorms():
                bn.weight.fill_(1.0)
                bn.bias.zero_()
                bn.reset_running_stats()

    # -- ParamVector access --------------------------------------------------

    def get_params(self) -> ParamVector:
        return parameters_to_vector(self.trainables()).detach().clone()

    def set_params(self, params: Union[ParamVector, np.ndarray]):
        vec = torch.as_tensor(np.asarray(params) if not isinstance(params, torch.Tensor) else params)
        if vec.ndim != 1 or vec.numel() != self.trainable_count:
            raise ConfigError(
                f"ParamVector length {vec.numel()} does not match trainable count {self.trainable_count}"
            )
        with torch.no_grad():
            vector_to_parameters(vec.detach().to(self.dtype).clone(), self.trainables())

    # -- evaluation ----------------------------------------------------------

    def forward(self) -> torch.Tensor:
        """G(z) as an (H_m, W_m) tensor in (0, 1)"""
        return self.net(self.z)[0, 0]

    def frozen_checksum(self) -> str:
        digest = hashlib.sha256()
        for p in self.frozen_parameters():
            digest.update(p.detach().cpu().contiguous().numpy().tobytes())
        return digest.hexdigest()

    def batchnorm_stats(self) -> np.ndarray:
        bns = self.batchnorms()
        parts = [bn.running_mean for bn in bns] + [bn.running_var for bn in bns]
        return torch.cat(parts).detach().cpu().double().numpy()

    def set_batchnorm_stats(self, stats: np.ndarray):
        """Inverse of batchnorm_stats: running means, then running variances"""
        bns = self.batchnorms()
        widths = [bn.num_features for bn in bns] * 2
        stats = np.asarray(stats, dtype=np.float64).ravel()
        if stats.size != sum(widths):
            raise ConfigError(f"BatchNorm stats length {stats.size} does not match {sum(widths)}")
        chunks = torch.split(torch.from_numpy(stats), widths)
        with torch.no_grad():
            for bn, mean, var in zip(bns, chunks[:len(bns)], chunks[len(bns):]):
                bn.running_mean.copy_(mean)
                bn.running_var.copy_(var)


def _check_dims(mosaic_dims: Tuple[int, int], cfg: HourglassConfig) -> Tuple[int, int]:
    h, w = (int(d) for d in mosaic_dims)
    if h < 1 or w < 1:
        raise ConfigError(f"mosaic dims must be positive, got {h}x{w}")
    if h % cfg.multiple or w % cfg.multiple:
        raise ConfigError(f"mosaic {h}x{w} is not divisible by 2**scales = {cfg.multiple}")
    # BatchNorm on a batch of one needs more than one value per channel
    if (h // cfg.multiple) * (w // cfg.multiple) < 2:
        raise ConfigError(f"mosaic {h}x{w} is too small for {cfg.scales} scales")
    return h, w


def init_generator(cfg: HourglassConfig, mosaic_dims: Tuple[int, int], seed: int,
                   latent_seed: Optional[int] = None, dtype: torch.dtype = torch.float32) -> GeneratorState:
    state = GeneratorState(cfg, mosaic_dims, seed, latent_seed=latent_seed, dtype=dtype)
    logger.debug(
        f"Generator {mosaic_dims[0]}x{mosaic_dims[1]}: {state.trainable_count} trainable, "
        f"{state.frozen_count} frozen"
    )
    return state


def get_params(state: GeneratorState) -> ParamVector:
    return state.get_params()


def set_params(state: GeneratorState, params: ParamVector):
    state.set_params(params)


def forward(state: GeneratorState) -> torch.Tensor:
    return state.forward()


def objective(output: torch.Tensor, target: torch.Tensor, lam: float,
              tv_reduction: str = "sum") -> torch.Tensor:
    """mean squared error + lam * TV / n, n = 1 ("sum") or the pixel count ("mean")"""
    if tv_reduction == "mean":
        norm = output.numel()
    elif tv_reduction == "sum":
        norm = 1
    else:
        raise ConfigError(f"tv_reduction must be 'mean' or 'sum', got {tv_reduction!r}")
    loss = torch.mean((output - target) ** 2)
    if lam:
        loss = loss + lam * tv(output) / norm
    return loss


def evaluate(state: GeneratorState, target, lam: float,
             tv_reduction: str = "sum") -> Tuple[float, ParamVector, torch.Tensor]:
    """One forward/backward pass; returns (loss, grad, detached output)"""
    for p in state.trainables():
        p.grad = None

    output = state.forward()
    tgt = torch.as_tensor(np.asarray(target) if not isinstance(target, torch.Tensor) else target)
    tgt = tgt.to(state.dtype)
    if tgt.shape != output.shape:
        raise ConfigError(f"target shape {tuple(tgt.shape)} does not match output {tuple(output.shape)}")

    loss = objective(output, tgt, lam, tv_reduction)
    if not torch.isfinite(loss):
        raise NumericalError("non-finite loss")
    loss.backward()

    grad = torch.cat([p.grad.reshape(-1) for p in state.trainables()]).detach()
    return float(loss.detach()), grad, output.detach()


def loss_and_gradients(state: GeneratorState, target, lam: float,
                       tv_reduction: str = "sum") -> Tuple[float, ParamVector]:
    loss, grad, _ = evaluate(state, target, lam, tv_reduction)
    return loss, grad


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(path: Union[str, Path], state: GeneratorState, latent_seed: Optional[int] = None,
                    extra: Optional[Dict] = None) -> Path:
    """
    Write magic line, one JSON header line, then the ParamVector and the
    BatchNorm running statistics as two consecutive .npy arrays.
    The header carries everything needed to rebuild the frozen network.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = state.get_params().cpu().numpy()
    bn_stats = state.batchnorm_stats()
    header = {
        "config": asdict(state.config),
        "mosaic_dims": list(state.mosaic_dims),
        "seed": state.seed,
        "latent_seed": latent_seed,
        "dtype": str(state.dtype).replace("torch.", ""),
        "length": int(params.size),
        "bn_stats_length": int(bn_stats.size),
        "frozen_checksum": state.frozen_checksum(),
    }
    if extra:
        header["extra"] = extra

    buf = io.BytesIO()
    np.save(buf, params, allow_pickle=False)
    np.save(buf, bn_stats, allow_pickle=False)
    try:
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
            f.write(buf.getvalue())
    except OSError as e:
        raise SequenceIOError(f"cannot write checkpoint ({e.strerror})", str(path)) from e
    return path


def load_checkpoint(path: Union[str, Path]) -> GeneratorState:
    path = Path(path)
    try:
        with open(path, "rb") as f:
            magic = f.readline()
            if magic != CHECKPOINT_MAGIC:
                raise SequenceIOError("not a turbdip checkpoint (bad magic)", str(path))
            header = json.loads(f.readline())
            payload = io.BytesIO(f.read())
        params = np.load(payload, allow_pickle=False)
        bn_stats = np.load(payload, allow_pickle=False)
        expected = (header["length"], header["bn_stats_length"])
    except SequenceIOError:
        raise
    except (OSError, ValueError, EOFError, KeyError, TypeError) as e:
        raise SequenceIOError(f"unreadable checkpoint ({e})", str(path)) from e

    if (params.size, bn_stats.size) != expected:
        raise SequenceIOError("checkpoint is truncated", str(path))
    dtype = getattr(torch, header["dtype"])
    state = init_generator(HourglassConfig(**header["config"]), tuple(header["mosaic_dims"]),
                           header["seed"], latent_seed=header.get("latent_seed"), dtype=dtype)
    state.set_params(torch.from_numpy(params))
    state.set_batchnorm_stats(bn_stats)
    if state.frozen_checksum() != header["frozen_checksum"]:
        logger.warning(f"Frozen weights rebuilt from {path} differ from the recorded checksum")
    return state
