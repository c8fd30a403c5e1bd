"""The iterative planning session: propose, execute, feed back, repeat.

Each turn the backend proposes up to k actions. The simulator executes them
left to right, keeping the successful prefix. A turn containing any
constraint violation bumps the error count once; structured feedback (goal
and current relations, last steps, failure info, executed history) is built
for the next turn. The session ends on the backend's stop signal, on the
error count reaching the threshold, or on the iteration cap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .actions import Action, ExecutionResult, execute_sequence
from .planner import PlannerBackend, PlannerContext, PlannerTurn
from .scene_graph import ExactGraph, GoalSpec, LabelMode, SceneGraph, satisfies
from .textio import (
    SINGLE_STACK_GOAL_NOTE,
    Feedback,
    render_relations,
    serialize_action,
    serialize_feedback,
)


@dataclass(frozen=True)
class LoopParams:
    """k actions per turn, error threshold t, and a non-termination guard."""

    k: int = 3
    t: int = 5
    max_iterations: int = 25
    label_mode: LabelMode = LabelMode.IGNORE_LABEL

    def __post_init__(self) -> None:
        if self.k < 1 or self.t < 1 or self.max_iterations < 1:
            raise ValueError("k, t and max_iterations must all be at least 1")


@dataclass
class LoopState:
    current: SceneGraph
    error_count: int = 0
    executed_so_far: list[Action] = field(default_factory=list)
    turn_index: int = 0
    last_feedback: Optional[Feedback] = None


class Outcome(Enum):
    SUCCESS = "success"
    ERROR_THRESHOLD_REACHED = "error_threshold_reached"
    STOP_WITHOUT_GOAL = "stop_without_goal"
    ITERATION_CAP_REACHED = "iteration_cap_reached"
    BACKEND_ERROR = "backend_error"


@dataclass(frozen=True)
class TurnRecord:
    turn: PlannerTurn
    result: Optional[ExecutionResult]
    feedback: Optional[Feedback]


@dataclass(frozen=True)
class PlanRunResult:
    """Transcript and verdict of one session."""

    outcome: Outcome
    final_graph: SceneGraph
    executed: tuple[Action, ...]
    error_count: int
    turns: tuple[TurnRecord, ...]
    error: Optional[str] = None

    @property
    def success(self) -> bool:
        return self.outcome is Outcome.SUCCESS


def build_feedback(
    state: LoopState,
    goal: GoalSpec,
    last_turn: Optional[PlannerTurn],
    exec_result: Optional[ExecutionResult],
    label_mode: LabelMode = LabelMode.IGNORE_LABEL,
) -> Feedback:
    """Assemble the six-field feedback object for the next turn."""
    if isinstance(goal, ExactGraph):
        goal_relations: list[str] | str = render_relations(goal.graph, label_mode)
    else:
        goal_relations = SINGLE_STACK_GOAL_NOTE
    failed = exec_result.failed_at_step if exec_result else None
    reason = exec_result.failure_reason if exec_result else None
    return Feedback(
        goal_graph_relations=goal_relations,
        current_graph_relations=render_relations(state.current, label_mode),
        last_provided_steps=[serialize_action(a) for a in last_turn.actions] if last_turn else [],
        failed_at_step=serialize_action(failed) if failed else None,
        failure_reason=reason.value if reason else None,
        executed_so_far=[serialize_action(a) for a in state.executed_so_far],
    )


def run_iterative(
    init: SceneGraph,
    goal: GoalSpec,
    backend: PlannerBackend,
    params: LoopParams = LoopParams(),
    require_open_containers: bool = False,
) -> PlanRunResult:
    """Drive one planning session to a terminal outcome.

    Successful prefixes of partially failing turns stay applied. The error
    count rises at most once per turn. On the stop signal the goal is
    evaluated: reaching it is SUCCESS, stopping short is STOP_WITHOUT_GOAL.
    The backend is never consulted again after a terminal outcome.
    """
    state = LoopState(current=init)
    records: list[TurnRecord] = []

    def finish(outcome: Outcome, error: Optional[str] = None) -> PlanRunResult:
        return PlanRunResult(
            outcome=outcome,
            final_graph=state.current,
            executed=tuple(state.executed_so_far),
            error_count=state.error_count,
            turns=tuple(records),
            error=error,
        )

    while True:
        if state.error_count >= params.t:
            return finish(Outcome.ERROR_THRESHOLD_REACHED)
        if state.turn_index >= params.max_iterations:
            return finish(Outcome.ITERATION_CAP_REACHED)
        ctx = PlannerContext(
            initial=init,
            goal=goal,
            current=state.current,
            k=params.k,
            last_feedback=state.last_feedback,
            transcript=tuple(r.turn for r in records),
        )
        try:
            turn = backend.propose(ctx)
        except Exception as exc:  # backend failures terminate the session, not the harness
            return finish(
                Outcome.BACKEND_ERROR, f"turn {state.turn_index}: {type(exc).__name__}: {exc}"
            )
        state.turn_index += 1
        if turn.stop:
            records.append(TurnRecord(turn=turn, result=None, feedback=None))
            reached = satisfies(state.current, goal, params.label_mode)
            return finish(Outcome.SUCCESS if reached else Outcome.STOP_WITHOUT_GOAL)
        result = execute_sequence(state.current, turn.actions, require_open_containers)
        state.current = result.final_graph
        state.executed_so_far.extend(result.executed)
        if result.failure_reason is not None:
            state.error_count += 1
        state.last_feedback = build_feedback(state, goal, turn, result, params.label_mode)
        records.append(TurnRecord(turn=turn, result=result, feedback=state.last_feedback))


def format_transcript(result: PlanRunResult) -> str:
    """Human-readable session log: turns, execution, and feedback."""
    lines = [f"outcome: {result.outcome.value}", f"errors: {result.error_count}"]
    if result.error:
        lines.append(f"backend error: {result.error}")
    for i, record in enumerate(result.turns, start=1):
        lines.append(f"--- turn {i} ---")
        if record.turn.raw_text is not None:
            lines.append("response:")
            lines.append(record.turn.raw_text)
        lines.append(
            "proposed: " + (", ".join(serialize_action(a) for a in record.turn.actions) or "(none)")
        )
        if record.turn.stop:
            lines.append("stop: yes")
        if record.result is not None:
            if record.result.failure_reason is not None:
                lines.append(
                    f"failed at: {serialize_action(record.result.failed_at_step)}"
                    f" ({record.result.failure_reason.value})"
                )
            lines.append(f"executed: {len(record.result.executed)} action(s)")
        if record.feedback is not None:
            lines.append("feedback:")
            lines.append(serialize_feedback(record.feedback))
    lines.append(f"total executed: {len(result.executed)}")
    return "\n".join(lines)
