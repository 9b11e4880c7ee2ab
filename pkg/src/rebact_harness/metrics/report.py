"""Aggregate episode results and check them against the call logs."""
import csv
import io
import json
import logging
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from pydantic import BaseModel, ValidationError

from ..agent.trajectory import CallRecord
from ..config import EpisodeResult, Summary
from ..errors import CorruptLog, EmptyInput, IntegrityError

logger = logging.getLogger(__name__)

COLUMNS = (
    "method",
    "n_tasks",
    "success_rate",
    "avg_score",
    "avg_llm_calls",
    "modification_proportion",
    "avg_retries",
)


def round2(value: float) -> str:
    """Two decimals, halves rounded away from zero."""
    return str(Decimal(str(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def aggregate(results: Sequence[EpisodeResult], label: Optional[str] = None) -> Summary:
    """Summarise one method's results. The modification proportion is pooled over all steps."""
    if not results:
        raise EmptyInput("no episode results to aggregate")
    if label is None:
        methods = sorted({r.method for r in results})
        if len(methods) > 1:
            raise ValueError(f"results mix methods {methods}; aggregate them separately")
        label = methods[0]

    n = len(results)
    steps = sum(r.steps for r in results)
    modifications = sum(r.modifications for r in results)
    return Summary(
        method=label,
        n_tasks=n,
        success_rate=100.0 * sum(1 for r in results if r.success) / n,
        avg_score=sum(r.score for r in results) / n,
        avg_llm_calls=sum(r.llm_calls for r in results) / n,
        modification_proportion=modifications / steps if steps else 0.0,
        avg_retries=sum(r.retries for r in results) / n,
    )


def _row(summary: Summary) -> List[str]:
    return [
        summary.method,
        str(summary.n_tasks),
        round2(summary.success_rate),
        round2(summary.avg_score),
        round2(summary.avg_llm_calls),
        round2(summary.modification_proportion),
        round2(summary.avg_retries),
    ]


def render_summary(summaries: Sequence[Summary]) -> Tuple[str, str]:
    """Plain-text table and CSV with identical values."""
    rows = [_row(s) for s in summaries]

    widths = [max(len(col), *(len(row[i]) for row in rows)) for i, col in enumerate(COLUMNS)]
    lines = []
    for cells in [list(COLUMNS)] + rows:
        padded = [cells[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(cells[1:], widths[1:])]
        lines.append("  ".join(padded).rstrip())
    table = "\n".join(lines) + "\n"

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(COLUMNS)
    writer.writerows(rows)
    return table, buffer.getvalue()


def _read_jsonl(path: Path, model: type) -> List[BaseModel]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            try:
                records.append(model(**json.loads(line)))
            except (json.JSONDecodeError, TypeError) as e:
                raise CorruptLog(str(path), line_no, f"not a JSON object: {e}") from e
            except ValidationError as e:
                raise CorruptLog(str(path), line_no, f"unexpected record: {e.error_count()} field errors") from e
    return records


def read_trajectory_log(path: Path) -> List[CallRecord]:
    """Read one episode's call log. An empty file is an empty log."""
    return _read_jsonl(path, CallRecord)


def read_results(path: Path) -> List[EpisodeResult]:
    return _read_jsonl(path, EpisodeResult)


class Recount(BaseModel):
    llm_calls: int = 0
    steps: int = 0
    modifications: int = 0
    retries: int = 0


def recount(records: Iterable[CallRecord]) -> Dict[str, Recount]:
    """Per-episode counters derived from call records alone."""
    counts: Dict[str, Recount] = {}
    for record in records:
        c = counts.setdefault(record.episode_id, Recount())
        c.llm_calls += 1
        if record.error is not None:
            c.retries += 1
        if record.exec is not None:
            c.steps += 1
            if record.exec.get("source") == "modified":
                c.modifications += 1
    return counts


def verify_results(results: Sequence[EpisodeResult], counts: Mapping[str, Recount]) -> None:
    """Raise ``IntegrityError`` naming the first episode whose counters disagree with its log."""
    for result in results:
        found = counts.get(result.task_id, Recount())
        for field in Recount.model_fields:
            logged, reported = getattr(found, field), getattr(result, field)
            if logged != reported:
                raise IntegrityError(
                    f"episode {result.task_id}: {field} is {reported} in results but {logged} in its log",
                    episode_id=result.task_id,
                )
