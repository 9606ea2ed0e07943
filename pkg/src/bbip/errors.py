"""Exception types raised across the package."""


class BbipError(Exception):
    """Base class for all package errors."""


class TrajectoryParseError(BbipError, ValueError):
    """A trajectory file does not follow the documented grammar."""

    def __init__(self, message, line=None, record=None):
        where = []
        if record is not None:
            where.append(f"record {record}")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.record = record


class LayoutError(BbipError, ValueError):
    """DoF layout is inconsistent with the data it describes."""


class PhaseDomainError(BbipError, ValueError):
    pass


class StatisticsError(BbipError, ValueError):
    """Not enough data to estimate a statistic."""


class NumericalError(BbipError, ArithmeticError):
    pass


class TrainingError(BbipError):
    """Raised by training with the name of the failing stage."""

    def __init__(self, stage, cause):
        super().__init__(f"training failed at stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


class ModelIntegrityError(BbipError):
    """Model file is truncated, corrupt or fails its checksum."""


class ModelVersionError(BbipError):
    def __init__(self, found, supported):
        super().__init__(
            f"model file format version {found} is not supported "
            f"(this library reads version {supported})"
        )
        self.found = found
        self.supported = supported
