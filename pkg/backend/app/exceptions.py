"""Error hierarchy shared by every service.

The CLI maps these onto process exit codes (see ``main.py``):
``ConfigError`` -> 2, ``NumericalError`` -> 3, any other ``PaintError`` -> 1.
"""
from typing import Optional


class PaintError(Exception):
    """Base class for all errors raised by the package."""


class ConfigError(PaintError, ValueError):
    """Invalid or unknown configuration keys/values."""


class ShapeError(PaintError, ValueError):
    """Operand shapes do not conform to an operation's rules."""

    def __init__(self, op: str, *shapes, detail: str = ""):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        shape_str = ", ".join(str(s) for s in self.shapes)
        msg = f"{op}: incompatible shapes {shape_str}"
        if detail:
            msg = f"{msg} ({detail})"
        super().__init__(msg)


class DomainError(PaintError, ValueError):
    """An input lies outside the documented range of an operation."""


class FormatError(PaintError, ValueError):
    """A file does not match its binary or text format."""


class NumericalError(PaintError, ArithmeticError):
    """Numerical failure: non-finite values, unstable integration, diverged training."""


class NonFiniteError(NumericalError):
    def __init__(self, where: str, step: Optional[int] = None):
        self.where = where
        self.step = step
        msg = f"non-finite values produced by {where}"
        if step is not None:
            msg = f"{msg} at step {step}"
        super().__init__(msg)


class CFLViolationError(NumericalError):
    def __init__(self, cfl: float, limit: float):
        self.cfl = cfl
        self.limit = limit
        super().__init__(f"CFL number {cfl:.4f} exceeds limit {limit}")


class TrainingDivergedError(NumericalError):
    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"loss became {loss} at step {step}; aborting training")


class SamplingError(NumericalError):
    def __init__(self, step: int, detail: str = "non-finite state"):
        self.step = step
        super().__init__(f"{detail} at denoising/rollout step {step}")
