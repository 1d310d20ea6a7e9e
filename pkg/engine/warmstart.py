"""
Warm-start prediction of {BatchNorm affine, z} across temporal blocks.

No history: fresh random. One entry: copy it. Two entries: first-order
linear extrapolation 2 * p[t-1] - p[t-2]. Predicted values are not
clamped; the optimizer pulls them back if they drift.
"""
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Deque, List, Optional, Tuple

from engine.errors import ConfigError
from engine.generator import ParamVector

HISTORY_CAPACITY = 2


class InitKind(Enum):
    FRESH = "fresh"
    COPY = "copy"
    PREDICTED = "predicted"


@dataclass(frozen=True)
class InitSpec:
    kind: InitKind
    params: Optional[ParamVector] = None

    @classmethod
    def fresh(cls) -> "InitSpec":
        return cls(InitKind.FRESH)

    @classmethod
    def copy(cls, params: ParamVector) -> "InitSpec":
        return cls(InitKind.COPY, params.detach().clone())

    @classmethod
    def predicted(cls, params: ParamVector) -> "InitSpec":
        return cls(InitKind.PREDICTED, params)


class ParamHistory:
    """Last two completed blocks' parameters, most recent last"""

    def __init__(self):
        self.entries: Deque[Tuple[int, ParamVector]] = deque(maxlen=HISTORY_CAPACITY)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def block_indices(self) -> List[int]:
        return [idx for idx, _ in self.entries]

    def push(self, block_index: int, params: ParamVector):
        if self.entries:
            last_index, last_params = self.entries[-1]
            if block_index <= last_index:
                raise ConfigError(f"block index {block_index} must exceed the last stored index {last_index}")
            if params.numel() != last_params.numel():
                raise ConfigError(
                    f"ParamVector length {params.numel()} differs from history length {last_params.numel()}"
                )
        self.entries.append((block_index, params.detach().clone()))


def push(history: ParamHistory, block_index: int, params: ParamVector):
    history.push(block_index, params)


def predict_init(history: ParamHistory) -> InitSpec:
    if len(history) == 0:
        return InitSpec.fresh()
    if len(history) == 1:
        return InitSpec.copy(history.entries[-1][1])

    (_, prev), (_, last) = history.entries[-2], history.entries[-1]
    if prev.numel() != last.numel():
        raise ConfigError(f"history entries differ in length ({prev.numel()} vs {last.numel()})")
    return InitSpec.predicted(2.0 * last - prev)
