"""Exception hierarchy shared by every tdrl module."""


class TdrlError(Exception):
    """Base class for all errors raised by this package."""


class TrajectoryError(TdrlError, ValueError):
    """A trajectory violates its structural invariants."""


class TestFunctionError(TdrlError, ValueError):
    """A test function produced an invalid result."""

    __test__ = False

    def __init__(self, test_name, message):
        super().__init__(f"test {test_name!r}: {message}")
        self.test_name = test_name


class DimensionError(TdrlError, ValueError):
    """Array shapes or vector lengths do not match."""


class NonFiniteError(TdrlError, FloatingPointError):
    """A loss, gradient or metric became NaN or infinite."""


class EmptyBatchError(TdrlError, ValueError):
    pass


class InsufficientDataError(TdrlError, ValueError):
    """A buffer holds too few items for the requested operation."""


class EmptySetError(TdrlError, ValueError):
    """The optimal trajectory set is empty (task infeasible at this horizon)."""


class SnapshotError(TdrlError, KeyError):
    pass


class ConfigError(TdrlError, ValueError):
    def __init__(self, key, message):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


class CheckpointError(TdrlError, OSError):
    def __init__(self, artifact, message):
        super().__init__(f"checkpoint artifact {artifact!r}: {message}")
        self.artifact = artifact
