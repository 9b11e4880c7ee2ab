"""Reflect-before-act reply protocol.

Every turn after the first, the model reviews the last W executed actions
(one verdict stanza each) and then names its next action. If a reviewed
action was wrong, the earliest genuine modification is executed instead of
the next action.
"""
import logging
import re
from typing import List, Literal, Optional, Protocol, Sequence, Tuple

from pydantic import BaseModel, Field, model_validator

from ..errors import FormatError, TemplateError
from .templates import PromptTemplate

logger = logging.getLogger(__name__)

Verdict = Literal["correct", "wrong"]
HistoryEntry = Tuple[str, str]

MODIFIED_EQUALS_PREVIOUS = "ModifiedEqualsPrevious"
VERDICT_ACTION_MISMATCH = "VerdictActionMismatch"

NEXT_ACTION_MARKER = "The next action is:"


class SlotVerdict(BaseModel):
    action: str
    verdict: Verdict
    modified: Optional[str] = None

    @model_validator(mode="after")
    def wrong_needs_modification(self):
        if self.verdict == "wrong" and not self.modified:
            raise ValueError(f"wrong verdict for '{self.action}' needs a modified action")
        return self


class ReflectionDecision(BaseModel):
    slots: List[SlotVerdict] = Field(default_factory=list)
    next_action: str = Field(min_length=1)
    raw: str = ""

    def summary(self) -> dict:
        """The parsed fields recorded in the call log."""
        return {
            "verdicts": [slot.verdict for slot in self.slots],
            "modified": [slot.modified for slot in self.slots],
            "next": self.next_action,
        }


class ExecChoice(BaseModel):
    source: Literal["next", "modified"]
    action: str
    slot: Optional[int] = None
    violations: List[str] = Field(default_factory=list)
    discarded_next: Optional[str] = None

    def summary(self) -> dict:
        return {"action": self.action, "source": self.source, "violations": list(self.violations)}


class PromptSubject(Protocol):
    exemplar_block: str

    def describe(self) -> str: ...


class PromptTask(BaseModel):
    """Task text for formats whose environment lives outside this package."""

    description: str
    exemplar_block: str = ""

    def describe(self) -> str:
        return self.description


class BuiltPrompt(BaseModel):
    text: str
    reflected: List[str] = Field(default_factory=list)
    clamped: bool = False
    reminder: str

    def with_reminder(self) -> str:
        return f"{self.text}\n{self.reminder}"


def render_history(history: Sequence[HistoryEntry]) -> str:
    return "\n".join(f"> {action}\n{observation}" for action, observation in history)


def _fill(section: str, template: PromptTemplate, name: str, **slots) -> str:
    try:
        return section.format(**slots)
    except (KeyError, IndexError, ValueError) as e:
        raise TemplateError(f"cannot fill section '{name}' of template '{template.format_id}': {e}") from e


def build_prompt(template: PromptTemplate, task: PromptSubject,
                 history: Sequence[HistoryEntry], window: int) -> BuiltPrompt:
    """Assemble the prompt for the next turn.

    Layout: header and rules, exemplars, task, the reflection (or first-step)
    instruction, then the history. Formats with a fixed window ignore
    ``window``; a window larger than the history is clamped.
    """
    if window < 1:
        raise TemplateError(f"window must be >= 1, got {window}")
    effective = template.fixed_window or window

    reflected: List[str] = []
    clamped = False
    if template.reflective and history:
        clamped = effective > len(history)
        reflected = [action for action, _ in history[-effective:]]

    if reflected:
        reply_lines = "\n".join(
            _fill(template.reply_line, template, "reply_line", previous_action=action)
            for action in reflected
        )
        reply_format = _fill(template.reply_format, template, "reply_format", reply_lines=reply_lines)
        instruction = _fill(
            template.reflection, template, "reflection",
            previous_action=reflected[-1], window=len(reflected), reply_format=reply_format,
        )
    else:
        reply_format = template.first_reply_format
        instruction = _fill(template.first_step, template, "first_step", reply_format=reply_format)

    text = _fill(
        template.prompt, template, "prompt",
        exemplars=task.exemplar_block,
        task=task.describe(),
        instruction=instruction,
        history=render_history(history),
    ).rstrip("\n")
    reminder = _fill(template.reminder, template, "reminder", reply_format=reply_format)
    return BuiltPrompt(text=text, reflected=reflected, clamped=clamped, reminder=reminder)


class _Grammar:
    def __init__(self, phrase: str, quoted: bool):
        self.phrase = phrase
        self.quoted = quoted
        # Unquoted formats are the web-shop ones, whose actions are name[...].
        self.bracketed = not quoted
        action = r"'(?P<action>[^\n]*?)'" if quoted else r"(?P<action>\S[^\n]*?)"
        self.verdict = re.compile(r"Previous action " + action + r" is[ \t]+(?P<verdict>(?i:correct|wrong))\.")
        self.modification = re.compile(r"\s*" + re.escape(phrase) + r"[ \t]*(?P<modified>[^\n]*)")


GRAMMARS = {
    "textcraft": _Grammar("It should be modified to:", quoted=True),
    "alfworld": _Grammar("To fix this mistake, I should execute:", quoted=True),
    "webshop": _Grammar("This action should be modified to:", quoted=False),
}

_NEXT = re.compile(re.escape(NEXT_ACTION_MARKER) + r"[ \t]*(?P<next>[^\n]*)")
_BRACKETED = re.compile(r"\w+\[[^\n]*\]")
_WS = re.compile(r"\s*")


def _grammar(format_id: str) -> _Grammar:
    try:
        return GRAMMARS[format_id]
    except KeyError:
        raise FormatError(f"unknown reply format '{format_id}'") from None


def _clean_action(text: str, grammar: _Grammar, what: str) -> str:
    action = text.strip()
    if not grammar.bracketed and action.endswith("."):
        action = action[:-1].rstrip()
    if not action:
        raise FormatError(f"empty {what}")
    if grammar.bracketed and not _BRACKETED.fullmatch(action):
        raise FormatError(f"{what} '{action}' is not of the form action[...]")
    return action


def parse_reflection(text: str, format_id: str,
                     expected_verdicts: Optional[int] = None) -> ReflectionDecision:
    """Parse a reflect-before-act reply.

    The reply is zero or more verdict stanzas followed by exactly one
    next-action line. Anything else is a ``FormatError``.
    """
    grammar = _grammar(format_id)
    occurrences = text.count(NEXT_ACTION_MARKER)
    if occurrences == 0:
        raise FormatError("missing next action")
    if occurrences > 1:
        raise FormatError("ambiguous reply: more than one next action")

    slots: List[SlotVerdict] = []
    pos = _WS.match(text).end()
    while True:
        match = grammar.verdict.match(text, pos)
        if not match:
            break
        pos = match.end()
        action = _clean_action(match.group("action"), grammar, "reviewed action")
        verdict = match.group("verdict").lower()

        modified = None
        clause = grammar.modification.match(text, pos)
        if clause:
            pos = clause.end()
            modified = _clean_action(clause.group("modified"), grammar, "modified action")
        elif verdict == "wrong":
            raise FormatError(f"wrong verdict for '{action}' has no '{grammar.phrase}' clause")
        slots.append(SlotVerdict(action=action, verdict=verdict, modified=modified))
        pos = _WS.match(text, pos).end()

    next_match = _NEXT.match(text, pos)
    if not next_match:
        if text.startswith("Previous action", pos):
            raise FormatError("malformed verdict stanza")
        rest = text[pos:].strip()
        if not rest:
            raise FormatError("next action must be on its own line")
        raise FormatError(f"unexpected text before next action: '{rest.splitlines()[0]}'")
    if text[next_match.end():].strip():
        raise FormatError("unexpected text after next action")
    next_action = _clean_action(next_match.group("next"), grammar, "next action")

    if expected_verdicts is not None and len(slots) != expected_verdicts:
        raise FormatError(f"expected {expected_verdicts} verdicts, found {len(slots)}")
    return ReflectionDecision(slots=slots, next_action=next_action, raw=text)


def render_reflection(decision: ReflectionDecision, format_id: str) -> str:
    """Render a decision in the reply grammar of ``format_id``."""
    grammar = _grammar(format_id)
    end = "." if grammar.quoted else ""
    lines = []
    for slot in decision.slots:
        action = f"'{slot.action}'" if grammar.quoted else slot.action
        line = f"Previous action {action} is {slot.verdict}."
        if slot.modified is not None:
            line += f" {grammar.phrase} {slot.modified}{end}"
        lines.append(line)
    lines.append(f"{NEXT_ACTION_MARKER} {decision.next_action}{end}")
    return "\n".join(lines)


def decide_executed_action(decision: ReflectionDecision, previous_actions: Sequence[str]) -> ExecChoice:
    """Pick the action to execute.

    The earliest wrong verdict whose modification differs from the action it
    reviews wins and the next action is discarded. A modification equal to
    its previous action is flagged and skipped.
    """
    violations: List[str] = []
    for i, slot in enumerate(decision.slots):
        previous = previous_actions[i] if i < len(previous_actions) else slot.action
        if slot.action != previous and VERDICT_ACTION_MISMATCH not in violations:
            violations.append(VERDICT_ACTION_MISMATCH)
        if slot.verdict != "wrong":
            continue
        if slot.modified.strip() == previous.strip():
            violations.append(MODIFIED_EQUALS_PREVIOUS)
            continue
        return ExecChoice(source="modified", action=slot.modified, slot=i,
                          violations=violations, discarded_next=decision.next_action)
    return ExecChoice(source="next", action=decision.next_action, violations=violations)


def parse_action_line(text: str) -> str:
    """Parse a plain ReAct reply: exactly one non-empty line."""
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines:
        raise FormatError("empty reply")
    if len(lines) > 1:
        raise FormatError(f"expected one action line, got {len(lines)}")
    return lines[0]
