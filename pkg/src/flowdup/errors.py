"""Error taxonomy shared across the simulator.

The CLI maps these onto process exit codes, so every failure a user can
trigger from a config file or data file should land in one of the classes
below rather than a bare ValueError.
"""


class FlowdupError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(FlowdupError):
    """Operands have incompatible or malformed shapes."""


class ContractError(FlowdupError):
    """An internal API contract was violated (wrong tape, non-scalar root, ...)."""


class ConfigError(FlowdupError):
    """A configuration value or combination of values is invalid."""


class DataError(FlowdupError):
    """A dataset violates its invariants (labels, batch sizes, parse errors)."""


class NumericError(FlowdupError):
    """A non-finite value surfaced where the math requires a finite one."""
