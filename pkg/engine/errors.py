"""
Exception hierarchy for turbdip.

Every error carries the CLI exit code it maps to, so the command layer
never has to guess what class of failure it is looking at.
"""
from typing import List, Optional


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3


class TurbDipError(Exception):
    """Base class for all turbdip failures"""

    exit_code = EXIT_USAGE


class ConfigError(TurbDipError, ValueError):
    """Invalid option value or inconsistent configuration"""

    exit_code = EXIT_USAGE


class SequenceIOError(TurbDipError, OSError):
    """Image sequence or mask could not be read or written"""

    exit_code = EXIT_IO

    def __init__(self, message: str, path: Optional[str] = None):
        if path is not None:
            message = f"{message}: {path}"
        super().__init__(message)
        self.path = path


class SequenceTooShortError(TurbDipError):
    """Fewer frames than one temporal block"""

    exit_code = EXIT_IO

    def __init__(self, n_frames: int, block_size: int):
        super().__init__(
            f"sequence shorter than block ({n_frames} frames, block size {block_size})"
        )
        self.n_frames = n_frames
        self.block_size = block_size


class NumericalError(TurbDipError, ArithmeticError):
    """Non-finite loss or gradient during fitting"""

    exit_code = EXIT_NUMERICAL

    def __init__(self, message: str, iteration: Optional[int] = None,
                 loss_trace: Optional[List[float]] = None, block_index: Optional[int] = None):
        self.iteration = iteration
        self.loss_trace = list(loss_trace or [])
        self.block_index = block_index
        super().__init__(message)

    def __str__(self) -> str:
        parts = [super().__str__()]
        if self.block_index is not None:
            parts.append(f"block {self.block_index}")
        if self.iteration is not None:
            parts.append(f"iteration {self.iteration}")
        if self.loss_trace:
            tail = ", ".join(f"{v:.6g}" for v in self.loss_trace[-5:])
            parts.append(f"last losses [{tail}]")
        return " | ".join(parts)
