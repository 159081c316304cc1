"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid hyperparameter, schedule or operator argument.

    ``pointer`` is the JSON pointer of the offending config field, when known.
    """

    def __init__(self, message, pointer=None):
        super().__init__(message)
        self.pointer = pointer


class ShapeError(ValueError):
    """Tensor or array shapes do not line up."""


class FormatError(ValueError):
    """A file on disk is not in the expected binary or text layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, batch, loss):
        super().__init__(f"loss became non-finite ({loss}) at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
