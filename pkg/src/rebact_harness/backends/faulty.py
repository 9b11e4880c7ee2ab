"""Fault injection around an inner backend.

Each call draws once from a seeded generator. On a hit, the action the inner
backend would execute next is replaced with a known-bad one; on the following
call the wrapper owns up to the fault and hands back the inner backend's
correct action as the modification. A ReAct reply has no correction channel,
so there the bad action simply replaces the inner one.
"""
import logging
import random
from typing import List, Optional

from pydantic import BaseModel

from ..env.craft_env import CraftTask
from ..errors import FormatError
from ..protocol.reflection import (
    ReflectionDecision,
    SlotVerdict,
    decide_executed_action,
    parse_reflection,
    render_reflection,
)
from .base import Backend, CompletionRequest
from .planner import TERMINAL_ACTION

logger = logging.getLogger(__name__)


class FaultRecord(BaseModel):
    call_index: int
    replaced: str
    injected: str
    corrected: Optional[str] = None


def known_bad_action(task: CraftTask) -> str:
    """An action the environment is guaranteed to reject for this task."""
    if not task.is_gettable(task.goal.item):
        return f"get 1 {task.goal.item}"
    # A gettable goal has no recipe, so crafting it is always rejected.
    return f"craft 1 {task.goal.item} using 1 {task.goal.item}"


class FaultyBackend:
    def __init__(self, inner: Backend, p: float, seed, task: CraftTask):
        self.inner = inner
        self.p = p
        self.rng = random.Random(seed)
        self.bad_action = known_bad_action(task)
        self.faults: List[FaultRecord] = []
        self._pending: Optional[FaultRecord] = None
        self._calls = 0

    def complete(self, request: CompletionRequest) -> str:
        call_index = self._calls
        self._calls += 1
        draw = self.rng.random()
        response = self.inner.complete(request)
        context = request.context

        if context.mode == "react":
            if draw < self.p:
                self._record(call_index, response.strip())
                return self.bad_action
            return response

        if self._pending is not None:
            return self._correction(response, context.format_id)

        if draw < self.p:
            try:
                decision = parse_reflection(response, context.format_id)
            except FormatError:
                return response
            choice = decide_executed_action(decision, context.previous_actions)
            if choice.source == "next":
                self._pending = self._record(call_index, decision.next_action)
                faulted = decision.model_copy(update={"next_action": self.bad_action})
                return render_reflection(faulted, context.format_id)
        return response

    def _record(self, call_index: int, replaced: str) -> FaultRecord:
        fault = FaultRecord(call_index=call_index, replaced=replaced, injected=self.bad_action)
        self.faults.append(fault)
        logger.debug(f"Injected '{self.bad_action}' in place of '{replaced}' at call {call_index}")
        return fault

    def _correction(self, response: str, format_id: str) -> str:
        fault, self._pending = self._pending, None
        try:
            decision = parse_reflection(response, format_id)
        except FormatError:
            return response

        wrong = next((slot for slot in decision.slots if slot.verdict == "wrong"), None)
        if wrong is not None:
            correct, next_action = wrong.modified, decision.next_action
        else:
            correct, next_action = decision.next_action, TERMINAL_ACTION
        fault.corrected = correct

        slots = [slot.model_copy() for slot in decision.slots]
        if slots:
            last = slots[-1]
            slots[-1] = SlotVerdict(action=last.action, verdict="wrong", modified=correct)
        corrected = ReflectionDecision(slots=slots, next_action=next_action)
        return render_reflection(corrected, format_id)
