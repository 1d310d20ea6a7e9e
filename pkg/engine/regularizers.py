"""Anisotropic total variation, for both numpy arrays and differentiable tensors."""
from typing import Union

import numpy as np
import torch

from engine.errors import ConfigError


def tv(x: Union[np.ndarray, torch.Tensor]) -> Union[float, torch.Tensor]:
    """
    Sum of absolute vertical and horizontal neighbour differences over the
    last two axes. In-bounds pairs only, no wraparound.

    Tensors stay tensors (so the result can be backpropagated; the
    subgradient of |0| is 0). Anything else is evaluated in float64 numpy.
    """
    if isinstance(x, torch.Tensor):
        vertical = (x[..., 1:, :] - x[..., :-1, :]).abs().sum()
        horizontal = (x[..., :, 1:] - x[..., :, :-1]).abs().sum()
        return vertical + horizontal

    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim < 2:
        raise ConfigError(f"tv expects a 2-D image, got shape {arr.shape}")
    return float(np.abs(np.diff(arr, axis=-2)).sum() + np.abs(np.diff(arr, axis=-1)).sum())
