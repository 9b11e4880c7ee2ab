import logging
from pathlib import Path
from typing import List, Sequence

from ..errors import BackendUnavailable, ConfigError
from .base import CompletionRequest

logger = logging.getLogger(__name__)

RECORD_SEPARATOR = "---"


def read_script(path: Path) -> List[str]:
    """Read a script file: one response per record, records separated by a ``---`` line."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read script {path}: {e}") from e

    records: List[str] = []
    current: List[str] = []
    for line in text.splitlines():
        if line.strip() == RECORD_SEPARATOR:
            records.append("\n".join(current).strip("\n"))
            current = []
        else:
            current.append(line)
    if any(line.strip() for line in current):
        records.append("\n".join(current).strip("\n"))
    return records


def script_for_task(script_path: Path, task_id: str) -> List[str]:
    """A directory holds one ``<task_id>.txt`` script per task; a file is shared."""
    path = Path(script_path)
    if path.is_dir():
        path = path / f"{task_id}.txt"
    return read_script(path)


class ScriptedBackend:
    """Replays fixed responses in order."""

    def __init__(self, responses: Sequence[str]):
        self.responses = list(responses)
        self.calls = 0

    def complete(self, request: CompletionRequest) -> str:
        if self.calls >= len(self.responses):
            raise BackendUnavailable(f"script exhausted after {len(self.responses)} responses")
        response = self.responses[self.calls]
        self.calls += 1
        logger.debug(f"[{request.context.task_id}] scripted response {self.calls}/{len(self.responses)}")
        return response
