"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class KeydynError(Exception):
    """Base class for all toolkit errors."""


class DataError(KeydynError):
    """Input data is malformed or insufficient (CLI exit code 2)."""


class NumericError(KeydynError):
    """A numerical routine failed (CLI exit code 3)."""


class ConfigError(KeydynError):
    """Invalid configuration or model specification (CLI exit code 1)."""


class MalformedRow(DataError):
    def __init__(self, line_no: int, reason: str = ""):
        self.line_no = line_no
        super().__init__(f"malformed row at line {line_no}" + (f": {reason}" if reason else ""))


class InvalidEnum(DataError):
    def __init__(self, line_no: int, value: str = ""):
        self.line_no = line_no
        self.value = value
        super().__init__(f"invalid enum value {value!r} at line {line_no}")


class DuplicateUser(DataError):
    def __init__(self, user_id: str):
        self.user_id = user_id
        super().__init__(f"duplicate label row for user {user_id!r}")


class EmptyDataset(DataError):
    pass


class EmptyInput(DataError):
    pass


class EmptyTraining(DataError):
    pass


class TooShort(DataError):
    pass


class MissingDevice(DataError):
    def __init__(self, device):
        self.device = device
        super().__init__(f"missing stream for device {getattr(device, 'value', device)}")


class StratumTooSmall(DataError):
    def __init__(self, label):
        self.label = label
        super().__init__(f"class {label!r} has fewer than 2 users")


class TooFewUsers(DataError):
    pass


class TooFewMinority(DataError):
    def __init__(self, label):
        self.label = label
        super().__init__(f"class {label!r} has fewer than 2 samples")


class LengthMismatch(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class InputTooShort(DataError):
    pass


class KTooLarge(ConfigError):
    pass


class BadSpec(ConfigError):
    pass


class DegenerateData(DataError):
    pass


class NoCachedForward(NumericError):
    pass


class NonFiniteActivation(NumericError):
    pass


class Divergence(NumericError):
    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"loss became non-finite ({loss}) at epoch {epoch}")
