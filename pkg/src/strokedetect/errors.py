"""Exception types shared across the package.

The CLI maps these onto its exit codes: FormatError/ConfigError -> 2,
DivergenceError -> 3, OSError -> 1.
"""


class ShapeError(ValueError):
    """Array extents do not satisfy an operation's contract."""


class FormatError(ValueError):
    """A file or document violates its schema."""


class ConfigError(ValueError):
    """Invalid or infeasible configuration."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, batch, loss):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class ShortVideoWarning(UserWarning):
    """Video is shorter than one window; nothing to sample or classify."""
