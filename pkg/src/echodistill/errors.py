"""Exception hierarchy shared by every stage of the pipeline."""


class EchoDistillError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(EchoDistillError, ValueError):
    pass


class DomainError(EchoDistillError, ValueError):
    """A value lies outside the range an operation is defined on."""


class OrderingError(EchoDistillError, ValueError):
    pass


class ManifestError(EchoDistillError):
    """A manifest or feature file could not be loaded or written."""


class DimensionError(ManifestError):
    pass


class DuplicateIdError(ManifestError):
    pass


class DataError(EchoDistillError, ValueError):
    """Feature values are unusable (NaN, Inf)."""


class DegenerateDataError(DataError):
    pass


class ClassTooSmallError(EchoDistillError):
    def __init__(self, class_label, size):
        super().__init__(
            f"class {class_label} has {size} member(s); at least 2 are needed to build a graph"
        )
        self.class_label = class_label
        self.size = size


class GraphError(EchoDistillError, ValueError):
    pass


class AssignmentError(EchoDistillError, ValueError):
    pass


class EvaluationError(EchoDistillError, ValueError):
    pass
