"""Exception hierarchy shared by every dimpleseg module."""


class DimpleSegError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(DimpleSegError, ValueError):
    """Tensor shapes do not line up for the requested operation."""

    def __init__(self, op: str, message: str, shapes=()):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        detail = f" (shapes: {', '.join(str(s) for s in self.shapes)})" if self.shapes else ""
        super().__init__(f"{op}: {message}{detail}")


class GeometryError(DimpleSegError, ValueError):
    """Spatial extents are invalid for a pool, conv or model stage."""

    def __init__(self, message: str, stage: str | None = None):
        self.stage = stage
        prefix = f"[{stage}] " if stage else ""
        super().__init__(prefix + message)


class ConfigError(DimpleSegError, ValueError):
    pass


class ValidationError(DimpleSegError, ValueError):
    """Input data violates a value contract (e.g. non-binary mask)."""


class DegenerateBatchError(DimpleSegError, ValueError):
    pass


class TrainingIntegrityError(DimpleSegError, RuntimeError):
    """Optimizer or training loop state is inconsistent (missing grads, NaN loss)."""


class IncompleteGridError(DimpleSegError, ValueError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f"tile grid incomplete, missing cells (row, col): {self.missing}")


class CheckpointError(DimpleSegError, ValueError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        where = f" at offset {offset}" if offset is not None else ""
        super().__init__(f"{message}{where}")


class ImageIOError(DimpleSegError, OSError):
    def __init__(self, path, reason: str):
        self.path = str(path)
        super().__init__(f"{self.path}: {reason}")


class ImageFormatError(DimpleSegError, ValueError):
    def __init__(self, path, reason: str):
        self.path = str(path)
        super().__init__(f"{self.path}: {reason}")
