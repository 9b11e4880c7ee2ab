"""Exception hierarchy for the harness.

Craft rejections are not errors: the environment reports them in-band as
observations. Everything below is raised to the caller.
"""
from typing import Optional


class HarnessError(Exception):
    """Base class for all harness errors."""


class ConfigError(HarnessError):
    """Invalid run, agent or backend configuration."""


class InvalidTask(HarnessError, ValueError):
    """A task or recipe universe violates its invariants."""


class UnparseableCommand(HarnessError):
    def __init__(self, text: str, reason: str):
        super().__init__(f"Cannot parse command '{text}': {reason}")
        self.text = text
        self.reason = reason


class InsufficientUniverse(HarnessError):
    def __init__(self, depth: int, wanted: int, available: int):
        super().__init__(
            f"Only {available} distinct goals at depth {depth}, {wanted} requested"
        )
        self.depth = depth
        self.wanted = wanted
        self.available = available


class Unsolvable(HarnessError):
    """The goal cannot be reached from the given inventory."""


class StateSpaceExceeded(HarnessError):
    """The planner expanded more states than its configured limit."""


class TemplateError(HarnessError):
    """A prompt template is malformed or cannot be filled."""


class FormatError(HarnessError):
    """A model response does not follow the expected reply format."""


class BackendError(HarnessError):
    """Base class for completion backend failures."""

    # Set by the episode runner before re-raising.
    partial_result = None


class BackendUnavailable(BackendError):
    def __init__(self, message: str, partial_result=None):
        super().__init__(message)
        self.partial_result = partial_result


class DeadlineExceeded(BackendError):
    """The request deadline passed before a response arrived."""


class AuthError(BackendError):
    """Missing or rejected credentials."""


class EmptyInput(HarnessError):
    """Aggregation was asked to summarise no results."""


class CorruptLog(HarnessError):
    def __init__(self, path: str, line_no: int, reason: str):
        super().__init__(f"Corrupt log {path} at line {line_no}: {reason}")
        self.path = path
        self.line_no = line_no


class IntegrityError(HarnessError):
    def __init__(self, message: str, episode_id: Optional[str] = None):
        super().__init__(message)
        self.episode_id = episode_id
