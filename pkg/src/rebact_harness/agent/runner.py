"""Episode loop for the REBACT and ReAct policies."""
import hashlib
import logging
import time
from dataclasses import dataclass
from typing import Optional, Tuple

from ..backends.base import Backend, CompletionRequest, EpisodeContext
from ..config import AgentConfig, EpisodeResult
from ..env.craft_env import CraftEnvironment, CraftTask
from ..errors import BackendError, FormatError
from ..protocol.reflection import build_prompt, decide_executed_action, parse_action_line, parse_reflection
from ..protocol.templates import PromptTemplate, load_template
from .trajectory import CallRecord, Trajectory, TrajectoryEntry, TrajectoryLogger

logger = logging.getLogger(__name__)

_TERMINATIONS = {
    "success": "success",
    "budget_exhausted": "budget_exhausted",
    "parse_abort": "parse_abort",
    "failure": "backend_unavailable",
}


@dataclass
class EpisodeState:
    task: CraftTask
    environment: CraftEnvironment
    trajectory: Trajectory
    call_log: TrajectoryLogger
    calls: int = 0
    retries: int = 0


class EpisodeRunner:
    def __init__(self, config: AgentConfig, template: Optional[PromptTemplate] = None):
        self.config = config
        self.template = template or load_template("react" if config.policy == "react" else config.format_id)

    def run_episode(self, task: CraftTask, backend: Backend, call_log: Optional[TrajectoryLogger] = None,
                    environment: Optional[CraftEnvironment] = None) -> EpisodeResult:
        """Run one task until success, budget exhaustion or a parse abort.

        Backend failures propagate with ``partial_result`` attached after the
        call log has been flushed.
        """
        state = EpisodeState(
            task=task,
            environment=environment or CraftEnvironment(task),
            trajectory=Trajectory(task_id=task.id),
            call_log=call_log or TrajectoryLogger(),
        )
        take_step = self.react_step if self.config.policy == "react" else self.rebact_step
        logger.info(f"Starting {self.config.policy} episode for task {task.id}")

        try:
            while True:
                if state.environment.goal_reached:
                    state.trajectory.status = "success"
                    break
                if len(state.trajectory.entries) >= self.config.budget:
                    state.trajectory.status = "budget_exhausted"
                    break
                if not take_step(state, backend):
                    state.trajectory.status = "parse_abort"
                    break
        except BackendError as e:
            state.trajectory.status = "failure"
            state.call_log.flush()
            e.partial_result = self._result(state)
            logger.error(f"Episode {task.id} stopped by backend failure: {e}")
            raise

        result = self._result(state)
        logger.info(
            f"Finished episode {task.id}: {result.termination} after {result.steps} steps, "
            f"{result.llm_calls} calls, {result.modifications} modifications"
        )
        return result

    def _result(self, state: EpisodeState) -> EpisodeResult:
        trajectory = state.trajectory
        success = trajectory.status == "success"
        return EpisodeResult(
            task_id=state.task.id,
            method=self.config.policy,
            success=success,
            score=100.0 if success else 0.0,
            steps=len(trajectory.entries),
            llm_calls=state.calls,
            modifications=trajectory.modifications,
            retries=state.retries,
            termination=_TERMINATIONS[trajectory.status],
        )

    def _call(self, state: EpisodeState, backend: Backend, prompt: str,
              context: EpisodeContext) -> Tuple[str, int, int]:
        call_index = state.calls
        started = time.perf_counter()
        response = backend.complete(CompletionRequest(prompt=prompt, context=context))
        # Only answered calls are counted and logged.
        state.calls += 1
        duration_ms = int((time.perf_counter() - started) * 1000)
        logger.debug(f"[{state.task.id}] call {call_index} answered in {duration_ms} ms")
        return response, call_index, duration_ms

    def _record(self, state: EpisodeState, prompt: str, response: str, call_index: int,
                duration_ms: int, **fields) -> None:
        state.call_log.write(CallRecord(
            episode_id=state.task.id,
            step=len(state.trajectory.entries),
            call_index=call_index,
            prompt_sha256=hashlib.sha256(prompt.encode("utf-8")).hexdigest(),
            response=response,
            duration_ms=duration_ms,
            **fields,
        ))

    def rebact_step(self, state: EpisodeState, backend: Backend) -> bool:
        """One reflect-then-act turn. Returns False if the reply never parsed."""
        history = state.trajectory.history
        built = build_prompt(self.template, state.task, history, self.config.window)
        if built.clamped:
            logger.debug(f"[{state.task.id}] window {self.config.window} clamped to {len(built.reflected)}")
        context = EpisodeContext(
            task_id=state.task.id,
            step=len(history),
            format_id=self.config.format_id,
            mode="rebact",
            previous_actions=built.reflected,
            last_observation=history[-1][1] if history else None,
        )

        prompt = built.text
        for attempt in range(self.config.max_parse_retries + 1):
            response, call_index, duration_ms = self._call(state, backend, prompt, context)
            try:
                decision = parse_reflection(response, self.config.format_id,
                                            expected_verdicts=len(built.reflected))
            except FormatError as e:
                state.retries += 1
                logger.warning(f"[{state.task.id}] unparseable reply (attempt {attempt + 1}): {e}")
                self._record(state, prompt, response, call_index, duration_ms, error=str(e))
                prompt = built.with_reminder()
                continue

            choice = decide_executed_action(decision, built.reflected)
            if choice.violations:
                logger.warning(f"[{state.task.id}] reply flagged: {', '.join(choice.violations)}")
            if choice.source == "modified":
                logger.info(f"[{state.task.id}] modified '{built.reflected[choice.slot]}' to '{choice.action}'")

            observation = state.environment.execute(choice.action)
            self._record(state, prompt, response, call_index, duration_ms,
                         parsed=decision.summary(), exec=choice.summary(), observation=observation)
            state.trajectory.append(TrajectoryEntry(
                executed_action=choice.action,
                observation=observation,
                source=choice.source,
                llm_call_ids=list(range(call_index - attempt, call_index + 1)),
            ))
            return True
        return False

    def react_step(self, state: EpisodeState, backend: Backend) -> bool:
        """One plain act turn: the reply is the action."""
        history = state.trajectory.history
        built = build_prompt(self.template, state.task, history, self.config.window)
        context = EpisodeContext(
            task_id=state.task.id,
            step=len(history),
            format_id=self.config.format_id,
            mode="react",
            last_observation=history[-1][1] if history else None,
        )

        prompt = built.text
        for attempt in range(self.config.max_parse_retries + 1):
            response, call_index, duration_ms = self._call(state, backend, prompt, context)
            try:
                action = parse_action_line(response)
            except FormatError as e:
                state.retries += 1
                logger.warning(f"[{state.task.id}] unparseable reply (attempt {attempt + 1}): {e}")
                self._record(state, prompt, response, call_index, duration_ms, error=str(e))
                prompt = built.with_reminder()
                continue

            observation = state.environment.execute(action)
            self._record(state, prompt, response, call_index, duration_ms,
                         parsed={"verdicts": [], "modified": [], "next": action},
                         exec={"action": action, "source": "next", "violations": []},
                         observation=observation)
            state.trajectory.append(TrajectoryEntry(
                executed_action=action,
                observation=observation,
                llm_call_ids=list(range(call_index - attempt, call_index + 1)),
            ))
            return True
        return False


def run_episode(config: AgentConfig, task: CraftTask, backend: Backend,
                call_log: Optional[TrajectoryLogger] = None,
                environment: Optional[CraftEnvironment] = None) -> EpisodeResult:
    return EpisodeRunner(config).run_episode(task, backend, call_log, environment)
