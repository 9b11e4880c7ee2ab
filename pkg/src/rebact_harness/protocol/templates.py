"""Prompt templates.

A template file is a sequence of ``=== section ===`` headers, each followed by
the section text. Slots use ``str.format`` syntax.
"""
import logging
import re
from importlib import resources
from pathlib import Path
from typing import Dict, Optional

from pydantic import BaseModel, Field

from ..errors import TemplateError

logger = logging.getLogger(__name__)

_SECTION = re.compile(r"^=== (?P<name>[a-z_]+) ===$", re.MULTILINE)

SHIPPED_TEMPLATES = ("textcraft", "alfworld", "webshop", "react")

_REQUIRED_SLOTS = {
    "prompt": ("{exemplars}", "{task}", "{instruction}", "{history}"),
    "reflection": ("{reply_format}",),
    "reply_format": ("{reply_lines}",),
    "first_step": ("{reply_format}",),
    "reminder": ("{reply_format}",),
}


class PromptTemplate(BaseModel):
    format_id: str
    prompt: str
    first_step: str
    first_reply_format: str
    reminder: str
    reflection: str = ""
    reply_line: str = ""
    reply_format: str = ""
    fixed_window: Optional[int] = Field(default=None, ge=1)

    @property
    def reflective(self) -> bool:
        return bool(self.reflection)


def parse_template(text: str, format_id: str) -> PromptTemplate:
    """Split a template file into its sections and check the required slots."""
    headers = list(_SECTION.finditer(text))
    if not headers:
        raise TemplateError(f"template '{format_id}' has no sections")

    sections: Dict[str, str] = {}
    for i, header in enumerate(headers):
        end = headers[i + 1].start() if i + 1 < len(headers) else len(text)
        name = header.group("name")
        if name in sections:
            raise TemplateError(f"template '{format_id}' repeats section '{name}'")
        sections[name] = text[header.end():end].strip("\n")

    for name in ("prompt", "first_step", "first_reply_format", "reminder"):
        if name not in sections:
            raise TemplateError(f"template '{format_id}' is missing section '{name}'")
    if "reflection" in sections:
        for name in ("reply_line", "reply_format"):
            if name not in sections:
                raise TemplateError(f"template '{format_id}' is missing section '{name}'")

    for name, slots in _REQUIRED_SLOTS.items():
        if name not in sections:
            continue
        missing = [slot for slot in slots if slot not in sections[name]]
        if missing:
            raise TemplateError(f"template '{format_id}' section '{name}' lacks {', '.join(missing)}")

    fixed_window = sections.pop("fixed_window", "").strip()
    try:
        return PromptTemplate(
            format_id=format_id,
            fixed_window=int(fixed_window) if fixed_window else None,
            **sections,
        )
    except ValueError as e:
        raise TemplateError(f"template '{format_id}' is invalid: {e}") from e


def load_template(format_id: str) -> PromptTemplate:
    """Load one of the templates shipped with the package."""
    if format_id not in SHIPPED_TEMPLATES:
        raise TemplateError(f"no shipped template named '{format_id}'")
    text = (resources.files(__package__) / "templates" / f"{format_id}.txt").read_text(encoding="utf-8")
    return parse_template(text, format_id)


def load_template_file(path: Path, format_id: Optional[str] = None) -> PromptTemplate:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise TemplateError(f"Cannot read template {path}: {e}") from e
    return parse_template(text, format_id or Path(path).stem)
