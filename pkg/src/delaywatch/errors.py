"""Exception types shared across the toolkit.

Every error raised on a contract violation derives from DelaywatchError so
callers (and the CLI) can map failures to exit codes uniformly.
"""


class DelaywatchError(Exception):
    """Base class for all toolkit errors."""


# --- design / netlist ---

class ConfigTooSmall(DelaywatchError):
    """Design generation config below the minimum viable size."""


class NoPathThroughWire(DelaywatchError):
    """Queried wire lies on no register-to-register data path."""


# --- silicon oracle ---

class EmptyLot(DelaywatchError):
    """A fabrication lot needs at least one die."""


class UnknownNet(DelaywatchError):
    """Trojan targets a net that does not exist in the design."""


# --- measurement ---

class PathFailsAtNominal(DelaywatchError):
    """True delay exceeds the nominal clock period; the path cannot be swept."""


class EmptyBin(DelaywatchError):
    """Slack aggregation over an empty measurement set."""


class EmptyInput(DelaywatchError):
    """Statistic requested over an empty sequence."""


# --- watchdog ---

class InsufficientPaths(DelaywatchError):
    """Design yields no register-to-register paths to build a dataset from."""


class DegenerateData(DelaywatchError):
    """Dataset cannot be standardized (for example, every feature constant)."""


class DimensionMismatch(DelaywatchError):
    """Feature vector width does not match the model input width."""


# --- detector ---

class MissingModel(DelaywatchError):
    """Watchdog-adjusted detection requested without a trained model."""


class NegativeThreshold(DelaywatchError):
    """Detection threshold must be nonnegative."""


class SingleClass(DelaywatchError):
    """ROC analysis needs both benign and Trojan examples."""


# --- pipeline / CLI ---

class SchemaError(DelaywatchError):
    """Experiment config failed validation. Carries the offending field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field '{field}': {message}")


class StageFailure(DelaywatchError):
    """A pipeline stage failed. Carries the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
