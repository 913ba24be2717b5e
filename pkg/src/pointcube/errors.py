"""
Exception hierarchy for pointcube.

Errors fall in two families that the CLI maps to exit codes: DataError
(bad or inconsistent input files, exit 2) and NumericError (shape faults,
non-finite losses, failed gradient checks, exit 3). UsageError is raised for
command-line misuse (exit 1).
"""


class PointCubeError(Exception):
    """Base class for all pointcube errors."""
    pass


class UsageError(PointCubeError):
    """Raised when the command line cannot be understood."""

    def __init__(self, message, usage=None):
        super().__init__(message)
        self.usage = usage


class DataError(PointCubeError):
    """Raised for invalid or inconsistent input data."""
    pass


class NumericError(PointCubeError):
    """Raised for numeric failures and shape faults."""
    pass


class ConfigError(DataError):
    """Raised when configuration is invalid or missing."""
    pass


class MalformedLine(DataError):
    def __init__(self, line_no, path=None, reason=None):
        where = f" in {path}" if path else ""
        detail = f": {reason}" if reason else ""
        super().__init__(f"Malformed line {line_no}{where}{detail}")
        self.line_no = line_no
        self.path = path


class EmptyCloud(DataError):
    def __init__(self, path=None):
        super().__init__(f"Point cloud has no points{f' ({path})' if path else ''}")
        self.path = path


class DuplicateId(DataError):
    def __init__(self, object_id):
        super().__init__(f"Duplicate object id in manifest: {object_id!r}")
        self.object_id = object_id


class OutOfRange(DataError):
    def __init__(self, value, low, high):
        super().__init__(f"Value {value} outside [{low}, {high}]")
        self.value = value


class ZeroVector(DataError):
    def __init__(self, index=None):
        where = f" at index {index}" if index is not None else ""
        super().__init__(f"Zero vector{where} has no direction")
        self.index = index


class EmptyText(DataError):
    def __init__(self):
        super().__init__("Text has no alphanumeric tokens")


class MissingLocalK(DataError):
    def __init__(self, class_name, k):
        super().__init__(f"Class {class_name!r} is missing local label k={k}")
        self.class_name = class_name
        self.k = k


class DimensionMismatch(DataError):
    def __init__(self, expected, got, where=None):
        suffix = f" ({where})" if where else ""
        super().__init__(f"Embedding dimension {got} does not match {expected}{suffix}")
        self.expected = expected
        self.got = got


class MissingEmbeddings(DataError):
    def __init__(self, class_name):
        super().__init__(f"No complete text embedding set for class {class_name!r}")
        self.class_name = class_name


class VersionMismatch(DataError):
    def __init__(self, expected, got):
        super().__init__(f"Checkpoint format version {got} is not supported (expected {expected})")
        self.expected = expected
        self.got = got


class CorruptFile(DataError):
    def __init__(self, path, reason):
        super().__init__(f"Corrupt file {path}: {reason}")
        self.path = path
        self.reason = reason


class IoError(DataError):
    def __init__(self, path, cause=None):
        super().__init__(f"I/O failure on {path}: {cause}")
        self.path = path


class ShapeMismatch(NumericError):
    def __init__(self, op, *shapes):
        super().__init__(f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}")
        self.op = op
        self.shapes = shapes


class EmptyInput(NumericError):
    def __init__(self, op):
        super().__init__(f"{op}: input has no rows")
        self.op = op


class AllKeysMasked(NumericError):
    def __init__(self):
        super().__init__("Attention mask excludes every key")


class AllBlocksInvalid(NumericError):
    def __init__(self, object_id=None):
        where = f" for object {object_id!r}" if object_id is not None else ""
        super().__init__(f"No valid block{where}")
        self.object_id = object_id


class NonFiniteLoss(NumericError):
    def __init__(self, step, value=None):
        super().__init__(f"Loss became non-finite at step {step}: {value}")
        self.step = step
        self.value = value


class GradcheckFailure(NumericError):
    def __init__(self, max_rel_err, tol, checked=None, samples=None):
        if checked is not None and samples is not None and checked < samples:
            message = f"Gradient check failed: only {checked} of {samples} entries could be checked"
        else:
            message = f"Gradient check failed: max relative error {max_rel_err:.3e} >= {tol:.1e}"
        super().__init__(message)
        self.max_rel_err = max_rel_err
        self.tol = tol
        self.checked = checked
        self.samples = samples
