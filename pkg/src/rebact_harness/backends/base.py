from typing import List, Literal, Optional, Protocol

from pydantic import BaseModel, Field


class EpisodeContext(BaseModel):
    """What an in-process backend may know about the turn. Remote backends see only the prompt."""

    task_id: str
    step: int = Field(default=0, ge=0)
    format_id: str = "textcraft"
    mode: Literal["rebact", "react"] = "rebact"
    previous_actions: List[str] = Field(default_factory=list)
    last_observation: Optional[str] = None


class CompletionRequest(BaseModel):
    prompt: str = Field(min_length=1)
    context: EpisodeContext
    deadline: Optional[float] = None  # time.monotonic() value


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> str:
        """Return the raw model text for ``request``."""
        ...
