"""
Central finite-difference checks of analytic gradients.

Runs in float64, on the composed generator at small scale and on every
layer type in isolation. Coordinates whose +-step perturbation flips the
sign of any LeakyReLU input or any TV neighbour difference sit on a kink,
where the two-sided difference does not estimate the (sub)gradient; those
are redrawn.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from engine.generator import ConvBlock, GeneratorState, HourglassConfig, evaluate, init_generator, objective
from engine.regularizers import tv

logger = logging.getLogger(__name__)

CHECK_CONFIG = HourglassConfig(scales=2, channels=8, skip_channels=4, latent_channels=8)
CHECK_DIMS = (16, 16)
DEFAULT_STEP = 1e-4
DEFAULT_TOLERANCE = 1e-4
# Below this, a difference is float64 round-off in the loss, not a gradient error
ABSOLUTE_FLOOR = 1e-10

# (loss, kink signature) for the current values of the checked tensors
Evaluator = Callable[[], Tuple[torch.Tensor, torch.Tensor]]


@dataclass
class CoordinateCheck:
    group: str
    index: int
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        if abs(self.analytic - self.numeric) < ABSOLUTE_FLOOR:
            return 0.0
        return abs(self.analytic - self.numeric) / (max(abs(self.analytic), abs(self.numeric)) + 1e-8)


@dataclass
class GradCheckReport:
    checks: List[CoordinateCheck] = field(default_factory=list)
    excluded: int = 0
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def max_rel_error(self) -> float:
        return max((c.rel_error for c in self.checks), default=0.0)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and self.max_rel_error < self.tolerance

    def by_group(self) -> Dict[str, List[CoordinateCheck]]:
        groups: Dict[str, List[CoordinateCheck]] = {}
        for c in self.checks:
            groups.setdefault(c.group, []).append(c)
        return groups

    def failures(self) -> List[CoordinateCheck]:
        return [c for c in self.checks if c.rel_error >= self.tolerance]


def _sample_coordinates(report: GradCheckReport, group: str, size: int, count: int,
                        grad: torch.Tensor, perturbed: Callable[[int, float], Tuple[float, torch.Tensor]],
                        base_sig: torch.Tensor, rng: np.random.Generator, step: float, max_attempts: int):
    """Draw up to count distinct smooth coordinates of one group and compare both gradients"""
    chosen = set()
    for _ in range(min(count, size)):
        for _ in range(max_attempts):
            idx = int(rng.integers(0, size))
            if idx in chosen:
                continue
            losses, smooth = [], True
            for sign in (1.0, -1.0):
                loss, sig = perturbed(idx, sign * step)
                losses.append(loss)
                smooth = smooth and torch.equal(sig, base_sig)
            if not smooth:
                report.excluded += 1
                continue
            chosen.add(idx)
            numeric = (losses[0] - losses[1]) / (2 * step)
            report.checks.append(CoordinateCheck(group, idx, float(grad[idx]), numeric))
            break


def check_function(evaluator: Evaluator, tensors: Dict[str, torch.Tensor], per_group: int = 20,
                   step: float = DEFAULT_STEP, tolerance: float = DEFAULT_TOLERANCE,
                   seed: int = 0, max_attempts: int = 50) -> GradCheckReport:
    """
    Gradient check of a scalar function of some leaf tensors.

    Args:
        evaluator: returns (loss, kink signature) from the tensors' current values
        tensors: name -> float64 leaf tensor with requires_grad; one group each
    """
    rng = np.random.default_rng(seed)
    leaves = list(tensors.values())
    loss, base_sig = evaluator()
    grads = torch.autograd.grad(loss, leaves)
    base_sig = base_sig.detach()

    report = GradCheckReport(tolerance=tolerance)
    for (name, tensor), grad in zip(tensors.items(), grads):
        flat = tensor.data.view(-1)

        def perturbed(idx: int, delta: float) -> Tuple[float, torch.Tensor]:
            original = float(flat[idx])
            flat[idx] = original + delta
            with torch.no_grad():
                value, sig = evaluator()
            flat[idx] = original
            return float(value), sig

        _sample_coordinates(report, name, flat.numel(), per_group, grad.reshape(-1), perturbed,
                            base_sig, rng, step, max_attempts)
    return report


# -- composed generator -------------------------------------------------------

def param_groups(state: GeneratorState) -> Dict[str, Tuple[int, int]]:
    """[start, stop) of each trainable group inside the ParamVector"""
    n_z = state.z.numel()
    n_bn = sum(bn.weight.numel() for bn in state.batchnorms())
    return {
        "z": (0, n_z),
        "gamma": (n_z, n_z + n_bn),
        "beta": (n_z + n_bn, n_z + 2 * n_bn),
    }


def _tv_signature(out: torch.Tensor) -> List[torch.Tensor]:
    return [
        torch.sign(out[..., 1:, :] - out[..., :-1, :]).flatten(),
        torch.sign(out[..., :, 1:] - out[..., :, :-1]).flatten(),
    ]


def _loss_and_signature(state: GeneratorState, target: torch.Tensor, lam: float,
                        tv_reduction: str) -> Tuple[float, torch.Tensor]:
    signs: List[torch.Tensor] = []

    def record(module, inputs, output):
        signs.append(torch.sign(inputs[0]).flatten())

    hooks = [m.register_forward_hook(record) for m in state.net.modules() if isinstance(m, nn.LeakyReLU)]
    try:
        with torch.no_grad():
            out = state.forward()
            loss = float(objective(out, target, lam, tv_reduction))
    finally:
        for h in hooks:
            h.remove()

    return loss, torch.cat(signs + _tv_signature(out))


def check_gradients(state: Optional[GeneratorState] = None, target: Optional[np.ndarray] = None,
                    lam: float = 0.1, tv_reduction: str = "sum", per_group: int = 20,
                    step: float = DEFAULT_STEP, tolerance: float = DEFAULT_TOLERANCE,
                    seed: int = 0, max_attempts: int = 50) -> GradCheckReport:
    """
    Compare the generator's analytic ParamVector gradient against central
    differences.

    Args:
        state: float64 generator; a small network is built when omitted
        target: mosaic to fit; uniform noise when omitted
        per_group: coordinates sampled from each of z, gamma and beta
        max_attempts: redraws allowed per coordinate before giving up on it
    """
    rng = np.random.default_rng(seed)
    if state is None:
        state = init_generator(CHECK_CONFIG, CHECK_DIMS, seed, dtype=torch.float64)
    if target is None:
        target = rng.random(state.mosaic_dims)
    target_t = torch.as_tensor(target, dtype=state.dtype)

    base = state.get_params()
    _, grad, _ = evaluate(state, target_t, lam, tv_reduction)
    state.set_params(base)
    _, base_sig = _loss_and_signature(state, target_t, lam, tv_reduction)

    groups = param_groups(state)
    report = GradCheckReport(tolerance=tolerance)
    for group, (lo, hi) in groups.items():

        def perturbed(idx: int, delta: float, lo: int = lo) -> Tuple[float, torch.Tensor]:
            trial = base.clone()
            trial[lo + idx] += delta
            state.set_params(trial)
            return _loss_and_signature(state, target_t, lam, tv_reduction)

        _sample_coordinates(report, group, hi - lo, per_group, grad[lo:hi], perturbed,
                            base_sig, rng, step, max_attempts)
    # indices are reported as ParamVector positions
    for c in report.checks:
        c.index += groups[c.group][0]

    state.set_params(base)
    logger.debug(
        f"Gradient check: {len(report.checks)} coordinates, {report.excluded} excluded, "
        f"max rel error {report.max_rel_error:.3e}"
    )
    return report


# -- layer types in isolation -------------------------------------------------

def _leaf(gen: torch.Generator, *shape: int, offset: float = 0.0) -> torch.Tensor:
    return (torch.randn(shape, generator=gen, dtype=torch.float64) + offset).requires_grad_(True)


def _conv_case(gen: torch.Generator):
    conv = nn.Conv2d(3, 4, 3, padding=1).double()
    with torch.no_grad():
        conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen, dtype=torch.float64))
        conv.bias.copy_(torch.randn(conv.bias.shape, generator=gen, dtype=torch.float64))
    x = _leaf(gen, 1, 3, 8, 8)
    readout = torch.randn((1, 4, 8, 8), generator=gen, dtype=torch.float64)

    def evaluator():
        return (conv(x) * readout).sum(), torch.empty(0)
    return evaluator, {"input": x, "weight": conv.weight, "bias": conv.bias}


def _batchnorm_case(gen: torch.Generator):
    gamma, beta = _leaf(gen, 4, offset=1.0), _leaf(gen, 4)
    x = _leaf(gen, 1, 4, 8, 8)
    readout = torch.randn((1, 4, 8, 8), generator=gen, dtype=torch.float64)

    def evaluator():
        out = F.batch_norm(x, None, None, gamma, beta, training=True)
        return (out * readout).sum(), torch.empty(0)
    return evaluator, {"input": x, "gamma": gamma, "beta": beta}


def _leaky_relu_case(gen: torch.Generator):
    act = nn.LeakyReLU(0.1)
    x = _leaf(gen, 1, 2, 8, 8)
    readout = torch.randn((1, 2, 8, 8), generator=gen, dtype=torch.float64)

    def evaluator():
        return (act(x) * readout).sum(), torch.sign(x.detach()).flatten()
    return evaluator, {"input": x}


def _conv_block_case(gen: torch.Generator):
    block = ConvBlock(3, 4, 3, 2, 0.1).double().train()
    with torch.no_grad():
        block.conv.weight.copy_(torch.randn(block.conv.weight.shape, generator=gen, dtype=torch.float64))
        block.conv.bias.zero_()
        block.bn.weight.copy_(1.0 + 0.1 * torch.randn(4, generator=gen, dtype=torch.float64))
        block.bn.bias.copy_(0.1 * torch.randn(4, generator=gen, dtype=torch.float64))
    x = _leaf(gen, 1, 3, 8, 8)
    readout = torch.randn((1, 4, 4, 4), generator=gen, dtype=torch.float64)

    def evaluator():
        pre = block.bn(block.conv(x))
        return (block.act(pre) * readout).sum(), torch.sign(pre.detach()).flatten()
    return evaluator, {"input": x, "gamma": block.bn.weight, "beta": block.bn.bias}


def _upsample_case(gen: torch.Generator):
    x = _leaf(gen, 1, 2, 4, 4)
    readout = torch.randn((1, 2, 8, 8), generator=gen, dtype=torch.float64)

    def evaluator():
        up = F.interpolate(x, size=(8, 8), mode="bilinear", align_corners=False)
        return (up * readout).sum(), torch.empty(0)
    return evaluator, {"input": x}


def _sigmoid_head_case(gen: torch.Generator):
    head = nn.Conv2d(4, 1, 1).double()
    with torch.no_grad():
        head.weight.copy_(torch.randn(head.weight.shape, generator=gen, dtype=torch.float64))
        head.bias.zero_()
    x = _leaf(gen, 1, 4, 8, 8)
    target = torch.rand((1, 1, 8, 8), generator=gen, dtype=torch.float64)

    def evaluator():
        return torch.mean((torch.sigmoid(head(x)) - target) ** 2), torch.empty(0)
    return evaluator, {"input": x, "weight": head.weight}


def _tv_case(gen: torch.Generator):
    x = _leaf(gen, 8, 8)

    def evaluator():
        return tv(x), torch.cat(_tv_signature(x.detach()))
    return evaluator, {"input": x}


LAYER_CASES = {
    "conv": _conv_case,
    "batchnorm": _batchnorm_case,
    "leaky_relu": _leaky_relu_case,
    "conv_bn_leaky_relu": _conv_block_case,
    "bilinear_upsample": _upsample_case,
    "sigmoid_head": _sigmoid_head_case,
    "tv": _tv_case,
}


def check_layer_types(per_group: int = 20, seed: int = 0,
                      tolerance: float = DEFAULT_TOLERANCE) -> Dict[str, GradCheckReport]:
    """One gradient check per layer type, each on its own small float64 graph"""
    reports = {}
    for offset, (name, build) in enumerate(LAYER_CASES.items()):
        gen = torch.Generator().manual_seed(seed * len(LAYER_CASES) + offset)
        evaluator, tensors = build(gen)
        reports[name] = check_function(evaluator, tensors, per_group=per_group, seed=seed + offset,
                                       tolerance=tolerance)
        logger.debug(f"Layer check {name}: max rel error {reports[name].max_rel_error:.3e}")
    return reports
