"""Exception taxonomy shared across the toolkit.

The CLI maps these onto process exit codes, so new failure modes should
reuse one of the existing classes where possible.
"""


class SuiteInError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(SuiteInError, ValueError):
    """A configuration value or file is invalid."""


class ShapeError(SuiteInError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(SuiteInError, ValueError):
    """Input values lie outside an operation's mathematical domain."""


class DegenerateInputError(SuiteInError, ValueError):
    """An operation received an empty or too-small input."""


class GraphError(SuiteInError, RuntimeError):
    """Autodiff graph contract violation (e.g. non-scalar backward root)."""


class ContractError(SuiteInError, ValueError):
    """A caller violated an operation's documented preconditions."""


class IngestionError(SuiteInError, ValueError):
    """A data file failed to parse or validate; message carries file/line."""


class CheckpointError(SuiteInError, ValueError):
    """A checkpoint file is malformed or inconsistent with its config."""


class EvaluationError(SuiteInError, ValueError):
    """Trajectories cannot be compared as requested."""


class NaNLossError(SuiteInError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch_index: int, message: str = ""):
        self.epoch = epoch
        self.batch_index = batch_index
        detail = message or "loss became non-finite"
        super().__init__(f"{detail} (epoch {epoch}, batch {batch_index})")
