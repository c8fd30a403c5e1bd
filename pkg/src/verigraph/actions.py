"""Action vocabulary and the simulator: precondition checks, applies, execution.

Three actions exist: Move(obj, src, dst), Open(obj), Close(obj). Every action
has a ``check_*`` that returns either None (ok) or a FailureCode, and an
``apply_*`` that produces the successor graph and must only be called after a
passing check. ``execute_sequence`` folds a whole plan over a graph, stopping
at the first failing check.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Union

from .scene_graph import Relation, SceneGraph, SupportEdge, check_name


class FailureCode(Enum):
    """Why an action's preconditions failed; values are the wire strings."""

    STILL_HAS_CHILDREN = "STILL_HAS_CHILDREN"
    NO_MATCHING_EDGE = "NO_MATCHING_EDGE"
    NO_MATCHING_NODE = "NO_MATCHING_NODE"
    NO_MATCHING_PARENT = "NO_MATCHING_PARENT"  # accepted as an alias of NO_MATCHING_EDGE
    NOT_OPENABLE = "NOT_OPENABLE"
    NOT_OPEN = "NOT_OPEN"


@dataclass(frozen=True)
class Move:
    obj: str
    src: str
    dst: str

    def __post_init__(self) -> None:
        check_name(self.obj)
        check_name(self.src)
        check_name(self.dst)
        if self.obj == self.dst:
            raise ValueError(f"cannot move {self.obj!r} onto itself")


@dataclass(frozen=True)
class Open:
    obj: str

    def __post_init__(self) -> None:
        check_name(self.obj)


@dataclass(frozen=True)
class Close:
    obj: str

    def __post_init__(self) -> None:
        check_name(self.obj)


Action = Union[Move, Open, Close]


class ActionContractError(RuntimeError):
    """An apply_* was called for an action whose check does not pass."""


@dataclass(frozen=True)
class ExecutionResult:
    final_graph: SceneGraph
    executed: tuple[Action, ...]
    failed_at_step: Optional[Action] = None
    failure_reason: Optional[FailureCode] = None

    @property
    def ok(self) -> bool:
        return self.failure_reason is None


def check_move(
    g: SceneGraph, obj: str, src: str, dst: str, require_open_containers: bool = False
) -> Optional[FailureCode]:
    """None if Move(obj, src, dst) is executable on ``g``, else its failure code.

    Checks run in a fixed order: node existence, then edge match, then
    children. With ``require_open_containers`` a closed openable source or
    destination additionally fails with NOT_OPEN.
    """
    if obj not in g or dst not in g:
        return FailureCode.NO_MATCHING_NODE
    if not any(e.parent == src for e in g.parent_edges(obj)):
        return FailureCode.NO_MATCHING_EDGE
    if g.children_of(obj):
        return FailureCode.STILL_HAS_CHILDREN
    if require_open_containers:
        for name in (src, dst):
            if name in g:
                node = g.node(name)
                if node.openable and not node.is_open:
                    return FailureCode.NOT_OPEN
    return None


def apply_move(g: SceneGraph, obj: str, src: str, dst: str) -> SceneGraph:
    """Successor graph after Move: the old support edge is replaced by an edge
    to ``dst``, labelled In when the destination is an openable container and
    On otherwise."""
    code = check_move(g, obj, src, dst)
    if code is not None:
        raise ActionContractError(f"move({obj}, {src}, {dst}) fails check: {code.value}")
    label = Relation.IN if g.node(dst).openable else Relation.ON
    edges = [e for e in g.edges if not (e.child == obj and e.parent == src)]
    edges.append(SupportEdge(obj, label, dst))
    return g.with_edges(edges)


def check_open(g: SceneGraph, obj: str) -> Optional[FailureCode]:
    if obj not in g:
        return FailureCode.NO_MATCHING_NODE
    if not g.node(obj).openable:
        return FailureCode.NOT_OPENABLE
    return None


def apply_open(g: SceneGraph, obj: str) -> SceneGraph:
    """Set is_open on ``obj``; opening an already-open object is a no-op."""
    code = check_open(g, obj)
    if code is not None:
        raise ActionContractError(f"open({obj}) fails check: {code.value}")
    return g.with_open_state(obj, True)


def check_close(g: SceneGraph, obj: str) -> Optional[FailureCode]:
    if obj not in g:
        return FailureCode.NO_MATCHING_NODE
    node = g.node(obj)
    if not node.openable:
        return FailureCode.NOT_OPENABLE
    if not node.is_open:
        return FailureCode.NOT_OPEN
    return None


def apply_close(g: SceneGraph, obj: str) -> SceneGraph:
    code = check_close(g, obj)
    if code is not None:
        raise ActionContractError(f"close({obj}) fails check: {code.value}")
    return g.with_open_state(obj, False)


def check_action(
    g: SceneGraph, action: Action, require_open_containers: bool = False
) -> Optional[FailureCode]:
    if isinstance(action, Move):
        return check_move(g, action.obj, action.src, action.dst, require_open_containers)
    if isinstance(action, Open):
        return check_open(g, action.obj)
    if isinstance(action, Close):
        return check_close(g, action.obj)
    raise TypeError(f"unsupported action: {action!r}")


def apply_action(g: SceneGraph, action: Action) -> SceneGraph:
    if isinstance(action, Move):
        return apply_move(g, action.obj, action.src, action.dst)
    if isinstance(action, Open):
        return apply_open(g, action.obj)
    if isinstance(action, Close):
        return apply_close(g, action.obj)
    raise TypeError(f"unsupported action: {action!r}")


def execute_sequence(
    g: SceneGraph, actions: Sequence[Action], require_open_containers: bool = False
) -> ExecutionResult:
    """Apply actions left to right; execution stops on the first error.

    The result holds the successfully executed prefix and the graph it
    produced. The first failing action is reported with its failure code and
    is not applied.
    """
    current = g
    executed: list[Action] = []
    for action in actions:
        code = check_action(current, action, require_open_containers)
        if code is not None:
            return ExecutionResult(
                final_graph=current,
                executed=tuple(executed),
                failed_at_step=action,
                failure_reason=code,
            )
        current = apply_action(current, action)
        executed.append(action)
    return ExecutionResult(final_graph=current, executed=tuple(executed))
