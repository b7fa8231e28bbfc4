"""Exception hierarchy.

Each class carries the process exit code used by the command line driver.
"""


class RMLError(Exception):
    exit_code = 1


class ConfigError(RMLError):
    """Invalid experiment configuration.  ``errors`` holds one message per problem."""

    exit_code = 2

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class SpecError(ConfigError):
    """An initial-data or analysis request that cannot be honoured as stated."""


class NumericalError(RMLError):
    exit_code = 3


class DegenerateMetricError(NumericalError):
    pass


class StabilityError(NumericalError):
    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class GaugeBlowupError(NumericalError):
    pass


class CodimensionError(NumericalError):
    """The singular set is too large for the removability statement to apply."""


class SnapshotError(RMLError):
    exit_code = 4


class ChecksumError(SnapshotError):
    pass
