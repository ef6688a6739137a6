"""Exception taxonomy shared across the package."""


class SimvtpError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SimvtpError):
    """Invalid configuration value, unknown key, or inconsistent settings."""


class ContractError(SimvtpError):
    """A runtime pre/postcondition was violated."""


class ShapeError(ContractError):
    """Array shapes do not satisfy an operation's contract."""


class DegenerateMaskError(ContractError):
    """A selection mask selects zero elements."""


class DegenerateInputError(ContractError):
    """An input is structurally empty (e.g. an all-[PAD] caption)."""


class CheckpointError(SimvtpError):
    """Checkpoint file is corrupt, truncated, or incompatible."""
