"""Error hierarchy shared by all lessnet modules."""


class LessNetError(Exception):
    """Base class for every error raised by lessnet."""

    pass


class ShapeError(LessNetError):
    """Tensor shapes are incompatible with an operation."""

    pass


class NonFiniteError(LessNetError):
    """A NaN or Inf appeared in a forward or backward pass."""

    def __init__(self, op: str, stage: str = "forward"):
        self.op = op
        self.stage = stage
        super().__init__(f"non-finite values produced by {op} ({stage} pass)")


class PyramidError(LessNetError):
    """Pooling pyramid construction error."""

    pass


class WarpError(LessNetError):
    """Warping or deformation-field error."""

    pass


class LossError(LessNetError):
    """Loss evaluation error."""

    pass


class FreezeError(LessNetError):
    """Freeze mode does not match the model's layers."""

    pass


class TrainingError(LessNetError):
    """Training aborted."""

    def __init__(
        self,
        message: str,
        epoch: int | None = None,
        pair_index: int | None = None,
        layer: str | None = None,
    ):
        self.epoch = epoch
        self.pair_index = pair_index
        self.layer = layer
        super().__init__(message)


class SynthError(LessNetError):
    """Synthetic data generation error."""

    pass


class TensorIOError(LessNetError):
    """Malformed LTF/LTC file."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class DatasetError(LessNetError):
    """Dataset directory or manifest error."""

    pass


class EvaluationError(LessNetError):
    """Metric evaluation error."""

    pass


class ConfigError(LessNetError):
    """Invalid run configuration (usage error)."""

    pass
