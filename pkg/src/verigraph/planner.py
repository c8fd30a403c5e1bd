"""Planner backends: a deterministic state-space search and a scripted replayer.

Every backend implements one method, ``propose(ctx) -> PlannerTurn``, and is
queried repeatedly by the iterative loop. The search planner doubles as the
ground-truth oracle for benchmarks: it explores the graph-state space through
the same check/apply rules the simulator enforces, so any plan it returns is
executable by construction.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Protocol, Sequence

from .actions import Action, Close, Move, Open, apply_action, execute_sequence
from .scene_graph import (
    ExactGraph,
    GoalSpec,
    Kind,
    LabelMode,
    SceneGraph,
    satisfies,
)
from .textio import Feedback


@dataclass(frozen=True)
class PlannerTurn:
    """One backend reply: up to k actions plus an optional stop signal."""

    actions: tuple[Action, ...] = ()
    stop: bool = False
    raw_text: Optional[str] = None


@dataclass(frozen=True)
class PlannerContext:
    """Everything a backend may look at when proposing its next turn."""

    initial: SceneGraph
    goal: GoalSpec
    current: SceneGraph
    k: int
    last_feedback: Optional[Feedback] = None
    transcript: tuple[PlannerTurn, ...] = ()


class PlannerBackend(Protocol):
    def propose(self, ctx: PlannerContext) -> PlannerTurn: ...


class DestinationPolicy(Enum):
    ANY_NODE = "any_node"
    FIXTURES_AND_GOAL_SUPPORTERS = "fixtures_and_goal_supporters"


class Optimality(Enum):
    SHORTEST = "shortest"
    ANY_VALID = "any_valid"


@dataclass(frozen=True)
class SearchConfig:
    max_children_per_node: Optional[int] = None
    allowed_destinations: DestinationPolicy = DestinationPolicy.ANY_NODE
    node_budget: int = 200_000
    optimality: Optimality = Optimality.SHORTEST

    def __post_init__(self) -> None:
        if self.node_budget <= 0:
            raise ValueError("node_budget must be positive")
        if self.max_children_per_node is not None and self.max_children_per_node < 1:
            raise ValueError("max_children_per_node must be at least 1")


class BudgetExhausted(RuntimeError):
    """The node budget ran out before the search space was exhausted."""


class PlanningFailed(RuntimeError):
    """The search proved the goal unreachable for this configuration."""


class ScriptExhausted(RuntimeError):
    """A scripted backend was asked for more turns than it recorded."""


def _state_key(g: SceneGraph) -> tuple:
    return (g.edges, g.open_names())


def _goal_test(goal: GoalSpec, label_mode: LabelMode) -> Callable[[SceneGraph], bool]:
    if isinstance(goal, ExactGraph):
        target_nodes = goal.graph.node_names
        target_edges = frozenset(e.key(label_mode) for e in goal.graph.edges)
        target_open = goal.graph.open_names()

        def exact(g: SceneGraph) -> bool:
            return (
                g.node_names == target_nodes
                and frozenset(e.key(label_mode) for e in g.edges) == target_edges
                and g.open_names() == target_open
            )

        return exact

    def stack(g: SceneGraph) -> bool:
        fixture_rooted = 0
        fan_out: dict[str, int] = {}
        for e in g.edges:
            fan_out[e.parent] = fan_out.get(e.parent, 0) + 1
            if g.node(e.parent).kind is Kind.FIXTURE:
                fixture_rooted += 1
        return fixture_rooted == 1 and all(v <= 1 for v in fan_out.values())

    return stack


def _heuristic(goal: GoalSpec, label_mode: LabelMode) -> Callable[[SceneGraph], int]:
    """Admissible remaining-action bound: each action fixes at most one
    mismatched support or open flag."""
    if isinstance(goal, ExactGraph):
        goal_parent = {e.child: e.key(label_mode)[1:] for e in goal.graph.edges}
        goal_open = goal.graph.open_names()

        def exact(g: SceneGraph) -> int:
            distance = 0
            seen = set()
            for e in g.edges:
                seen.add(e.child)
                if goal_parent.get(e.child) != e.key(label_mode)[1:]:
                    distance += 1
            distance += len(set(goal_parent) - seen)
            distance += len(g.open_names() ^ goal_open)
            return distance

        return exact

    def stack(g: SceneGraph) -> int:
        fixture_rooted = 0
        fan_out: dict[str, int] = {}
        for e in g.edges:
            fan_out[e.parent] = fan_out.get(e.parent, 0) + 1
            if g.node(e.parent).kind is Kind.FIXTURE:
                fixture_rooted += 1
        excess = sum(v - 1 for v in fan_out.values() if v > 1)
        return max(0, fixture_rooted - 1) + excess

    return stack


def _successor_actions(g: SceneGraph, goal: GoalSpec, cfg: SearchConfig) -> list[Action]:
    if cfg.allowed_destinations is DestinationPolicy.FIXTURES_AND_GOAL_SUPPORTERS:
        dests = {n.name for n in g.fixtures()}
        if isinstance(goal, ExactGraph):
            dests |= {e.parent for e in goal.graph.edges if e.parent in g}
        else:
            dests = set(g.node_names)
    else:
        dests = set(g.node_names)

    actions: list[Action] = []
    cap = cfg.max_children_per_node
    for node in g.nodes:
        if node.openable:
            actions.append(Close(node.name) if node.is_open else Open(node.name))
        if node.kind is not Kind.MOVABLE or g.children_of(node.name):
            continue
        parent = g.parent_of(node.name)
        if parent is None:
            continue
        for dst in dests:
            if dst in (node.name, parent[0]):
                continue
            # stacking capacity applies to movable supports; fixtures are open surfaces
            if (
                cap is not None
                and g.node(dst).kind is Kind.MOVABLE
                and len(g.children_of(dst)) >= cap
            ):
                continue
            actions.append(Move(node.name, parent[0], dst))
    actions.sort(key=_action_sort_key)
    return actions


def _action_sort_key(a: Action) -> tuple:
    if isinstance(a, Move):
        return ("move", a.obj, a.src, a.dst)
    if isinstance(a, Open):
        return ("open", a.obj, "", "")
    return ("close", a.obj, "", "")


def search_plan(
    init: SceneGraph,
    goal: GoalSpec,
    cfg: SearchConfig = SearchConfig(),
    label_mode: LabelMode = LabelMode.IGNORE_LABEL,
) -> Optional[list[Action]]:
    """Search the reachable graph states for an action sequence meeting the goal.

    SHORTEST mode expands states in cost order with an admissible distance
    bound, so the returned plan has minimum length. ANY_VALID mode is greedy
    on the same bound and returns the first plan found. Returns None when the
    whole reachable space was exhausted without meeting the goal; raises
    BudgetExhausted when the node budget ran out first.
    """
    if isinstance(goal, ExactGraph) and goal.graph.node_names != init.node_names:
        return None  # actions never create or destroy nodes
    done = _goal_test(goal, label_mode)
    if done(init):
        return []
    h = _heuristic(goal, label_mode)
    shortest = cfg.optimality is Optimality.SHORTEST

    counter = 0
    start_key = _state_key(init)
    best_cost: dict[tuple, int] = {start_key: 0}
    came_from: dict[tuple, tuple[tuple, Action]] = {}
    graphs: dict[tuple, SceneGraph] = {start_key: init}
    frontier: list[tuple[int, int, tuple]] = [(h(init), counter, start_key)]
    expanded = 0

    while frontier:
        _, _, key = heapq.heappop(frontier)
        g = graphs.pop(key, None)
        if g is None:
            continue  # stale queue entry
        expanded += 1
        if expanded > cfg.node_budget:
            raise BudgetExhausted(f"expanded more than {cfg.node_budget} states")
        cost = best_cost[key]
        for action in _successor_actions(g, goal, cfg):
            nxt = apply_action(g, action)
            nxt_key = _state_key(nxt)
            nxt_cost = cost + 1
            if nxt_key in best_cost and best_cost[nxt_key] <= nxt_cost:
                continue
            best_cost[nxt_key] = nxt_cost
            came_from[nxt_key] = (key, action)
            if done(nxt):
                return _reconstruct(came_from, start_key, nxt_key)
            graphs[nxt_key] = nxt
            counter += 1
            priority = nxt_cost + h(nxt) if shortest else h(nxt)
            heapq.heappush(frontier, (priority, counter, nxt_key))
    return None


def _reconstruct(
    came_from: dict[tuple, tuple[tuple, Action]], start: tuple, end: tuple
) -> list[Action]:
    plan: list[Action] = []
    key = end
    while key != start:
        key, action = came_from[key]
        plan.append(action)
    plan.reverse()
    return plan


def verify_plan(
    init: SceneGraph,
    goal: GoalSpec,
    actions: Sequence[Action],
    label_mode: LabelMode = LabelMode.IGNORE_LABEL,
) -> bool:
    """True iff the whole plan executes without failure and reaches the goal."""
    result = execute_sequence(init, actions)
    return result.ok and satisfies(result.final_graph, goal, label_mode)


class ScriptedBackend:
    """Replays a fixed list of turns; the deterministic test double."""

    def __init__(self, turns: Sequence[PlannerTurn]):
        self._turns = list(turns)
        self._cursor = 0

    def propose(self, ctx: PlannerContext) -> PlannerTurn:
        if self._cursor >= len(self._turns):
            raise ScriptExhausted(f"script ended after {len(self._turns)} turns")
        turn = self._turns[self._cursor]
        self._cursor += 1
        if len(turn.actions) > ctx.k:
            turn = PlannerTurn(turn.actions[: ctx.k], turn.stop, turn.raw_text)
        return turn


def scripted_backend(turns: Sequence[PlannerTurn]) -> ScriptedBackend:
    return ScriptedBackend(turns)


def turns_from_transcript(text: str) -> list[PlannerTurn]:
    """Parse a transcript into turns: one action block per turn, in order."""
    from .textio import extract_all_action_sequences

    return [
        PlannerTurn(tuple(actions), stop)
        for actions, stop in extract_all_action_sequences(text)
    ]


def scripted_backend_from_text(text: str) -> ScriptedBackend:
    """Build a scripted backend from a transcript file's text."""
    return ScriptedBackend(turns_from_transcript(text))


class SearchBackend:
    """Plans once with ``search_plan`` and serves the plan k actions at a time.

    The cached plan is invalidated (and planning redone from the current
    graph) if the session's graph ever diverges from what the previous chunk
    should have produced.
    """

    def __init__(
        self,
        cfg: SearchConfig = SearchConfig(),
        label_mode: LabelMode = LabelMode.IGNORE_LABEL,
    ):
        self._cfg = cfg
        self._label_mode = label_mode
        self._remaining: Optional[list[Action]] = None
        self._expected: Optional[tuple] = None

    def propose(self, ctx: PlannerContext) -> PlannerTurn:
        key = _state_key(ctx.current)
        if self._remaining is None or self._expected != key:
            plan = search_plan(ctx.current, ctx.goal, self._cfg, self._label_mode)
            if plan is None:
                raise PlanningFailed("goal is unreachable under the search configuration")
            self._remaining = plan
            self._expected = key
        if not self._remaining:
            return PlannerTurn((), stop=True)
        chunk = tuple(self._remaining[: ctx.k])
        self._remaining = self._remaining[ctx.k:]
        preview = ctx.current
        for action in chunk:
            preview = apply_action(preview, action)
        self._expected = _state_key(preview)
        return PlannerTurn(chunk, stop=False)


class FaultInjectingBackend:
    """Emits a guaranteed-to-fail action for the first ``failures`` turns,
    then delegates to the wrapped backend. Used to exercise the error
    threshold without a flaky model in the loop."""

    def __init__(self, inner: PlannerBackend, failures: int):
        self._inner = inner
        self._failures = failures
        self._calls = 0

    def propose(self, ctx: PlannerContext) -> PlannerTurn:
        self._calls += 1
        if self._calls <= self._failures:
            return PlannerTurn((self._bogus_action(ctx.current),), stop=False)
        return self._inner.propose(ctx)

    @staticmethod
    def _bogus_action(g: SceneGraph) -> Action:
        ghost = "ghost"
        while ghost in g:
            ghost += "_x"
        movables = g.movables()
        for m in movables:
            parent = g.parent_of(m.name)
            if parent is not None:
                return Move(m.name, parent[0], ghost)
        return Open(ghost)
