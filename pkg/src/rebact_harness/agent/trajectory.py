import json
import logging
from pathlib import Path
from typing import IO, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)

Status = Literal["running", "success", "budget_exhausted", "parse_abort", "failure"]


class TrajectoryEntry(BaseModel):
    executed_action: str
    observation: str
    source: Literal["next", "modified"] = "next"
    llm_call_ids: List[int] = Field(default_factory=list)


class Trajectory(BaseModel):
    """Append-only record of one episode."""

    task_id: str
    entries: List[TrajectoryEntry] = Field(default_factory=list)
    status: Status = "running"

    def append(self, entry: TrajectoryEntry) -> None:
        if self.status != "running":
            raise ValueError(f"trajectory for {self.task_id} is closed ({self.status})")
        self.entries.append(entry)

    @property
    def history(self) -> List[Tuple[str, str]]:
        return [(entry.executed_action, entry.observation) for entry in self.entries]

    @property
    def modifications(self) -> int:
        return sum(1 for entry in self.entries if entry.source == "modified")


class CallRecord(BaseModel):
    """One line of the per-episode call log. Field order is the file's key order."""

    episode_id: str
    step: int
    call_index: int
    prompt_sha256: str
    response: str
    parsed: Optional[dict] = None
    exec: Optional[dict] = None
    observation: Optional[str] = None
    duration_ms: int = 0
    error: Optional[str] = None

    def to_json(self) -> str:
        return json.dumps(self.model_dump(), ensure_ascii=False)


class TrajectoryLogger:
    """Writes call records as JSON lines, flushing after each one.

    With no path the records are only kept in memory.
    """

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path else None
        self.records: List[CallRecord] = []
        self._fh: Optional[IO[str]] = None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", encoding="utf-8")

    def write(self, record: CallRecord) -> None:
        self.records.append(record)
        if self._fh:
            self._fh.write(record.to_json() + "\n")
            self._fh.flush()

    def flush(self) -> None:
        if self._fh:
            self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "TrajectoryLogger":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()
