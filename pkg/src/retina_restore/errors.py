"""Exception hierarchy shared by every module of the package."""


class RetinaRestoreError(Exception):
    """Base class for all errors raised by retina_restore."""


class ShapeMismatchError(RetinaRestoreError, ValueError):
    """Two arrays that must agree in shape do not."""

    def __init__(self, what, expected, got):
        self.expected = tuple(expected)
        self.got = tuple(got)
        super().__init__(f"{what}: expected shape {self.expected}, got {self.got}")


class KernelError(RetinaRestoreError, ValueError):
    """Invalid kernel construction arguments (even size, bad sigma, ...)."""


class NumericalInstabilityError(RetinaRestoreError, ArithmeticError):
    """The divisive horizontal-cell modulation hit a (near) zero denominator."""

    def __init__(self, count, threshold):
        self.count = int(count)
        self.threshold = threshold
        super().__init__(
            f"divisive modulation unstable: {self.count} value(s) with "
            f"|alpha + h| < {threshold:g}"
        )


class NonFiniteError(RetinaRestoreError, FloatingPointError):
    """A loss or gradient became NaN/Inf during training."""

    def __init__(self, message, name=None):
        self.name = name
        super().__init__(message)


class DatasetError(RetinaRestoreError):
    """Problem locating, matching or decoding paired images."""


class UnmatchedFileError(DatasetError):
    def __init__(self, names, side):
        self.names = sorted(names)
        super().__init__(
            f"{len(self.names)} file(s) without a counterpart in {side}/: "
            + ", ".join(self.names)
        )


class ImageDecodeError(DatasetError):
    """File could not be read as an 8-bit RGB raster."""


class CheckpointError(RetinaRestoreError):
    """Base for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class ParamCountError(CheckpointError):
    def __init__(self, expected, got):
        self.expected = expected
        self.got = got
        super().__init__(f"checkpoint holds {got} parameters, expected {expected}")
