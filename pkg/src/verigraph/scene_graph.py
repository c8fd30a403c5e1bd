"""Support-graph scene model: nodes, in/on edges, validation, diffing, goal checks.

A scene is a forest of support relations. Fixtures (tables, shelves, fridges)
root the forest and never rest on anything; movable objects rest in or on
exactly one parent. Graphs are immutable values: every operation that would
change a graph returns a new one.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Mapping, Optional

NAME_RE = re.compile(r"[a-z0-9_]+\Z")


class UnknownNodeError(KeyError):
    """Raised when an operation names a node that is not in the graph."""

    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"unknown node: {self.name}"


class InvalidGraphError(ValueError):
    """Raised when an operation requires a structurally valid graph."""


def check_name(name: str) -> str:
    if not isinstance(name, str) or not NAME_RE.match(name):
        raise ValueError(f"object names must match [a-z0-9_]+, got {name!r}")
    return name


class Kind(Enum):
    FIXTURE = "fixture"
    MOVABLE = "movable"


class Relation(Enum):
    IN = "in"
    ON = "on"


class LabelMode(Enum):
    """How edge labels participate in comparisons.

    IGNORE_LABEL treats <a, in, b> and <a, on, b> as the same edge; it is the
    default because the simulator's outbound channel collapses every relation
    to "on". STRICT keys edges on the full (child, label, parent) triple.
    """

    STRICT = "strict"
    IGNORE_LABEL = "ignore_label"


@dataclass(frozen=True)
class Node:
    name: str
    kind: Kind
    openable: bool = False
    is_open: bool = False

    def __post_init__(self) -> None:
        check_name(self.name)

    def opened(self, is_open: bool) -> "Node":
        return Node(self.name, self.kind, self.openable, is_open)


@dataclass(frozen=True)
class SupportEdge:
    """Directed support relation: ``child`` rests in/on ``parent``."""

    child: str
    label: Relation
    parent: str

    def __post_init__(self) -> None:
        check_name(self.child)
        check_name(self.parent)
        if self.child == self.parent:
            raise ValueError(f"edge cannot relate {self.child!r} to itself")

    def key(self, mode: LabelMode) -> tuple:
        if mode is LabelMode.STRICT:
            return (self.child, self.label.value, self.parent)
        return (self.child, self.parent)


@dataclass(frozen=True)
class Violation:
    """One broken graph rule, as data rather than an exception."""

    rule: str
    subject: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.rule}({self.subject})" + (f": {self.detail}" if self.detail else "")


@dataclass(frozen=True)
class DictEntry:
    kind: Kind
    openable: bool = False


class GlobalDictionary:
    """Closed vocabulary of object names with their kind and openable flag."""

    def __init__(self, entries: Mapping[str, DictEntry]):
        self._entries = {check_name(n): e for n, e in entries.items()}

    @property
    def names(self) -> frozenset[str]:
        return frozenset(self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._entries))

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GlobalDictionary):
            return NotImplemented
        return self._entries == other._entries

    def entry(self, name: str) -> DictEntry:
        try:
            return self._entries[name]
        except KeyError:
            raise UnknownNodeError(name) from None

    def node_for(self, name: str, is_open: bool = False) -> Node:
        e = self.entry(name)
        return Node(name, e.kind, e.openable, is_open)

    def to_mapping(self) -> dict[str, dict]:
        return {
            n: {"kind": e.kind.value, "openable": e.openable}
            for n, e in sorted(self._entries.items())
        }

    @classmethod
    def from_mapping(cls, data: Mapping[str, Mapping]) -> "GlobalDictionary":
        entries = {}
        for name, meta in data.items():
            entries[name] = DictEntry(
                kind=Kind(meta["kind"]), openable=bool(meta.get("openable", False))
            )
        return cls(entries)


class SceneGraph:
    """Immutable set of nodes plus directed support edges.

    Construction is permissive: structurally broken graphs (orphan movables,
    cycles, dangling edge endpoints) can be represented so that ``validate``
    can report on them. Only local, per-value rules are enforced eagerly.
    """

    __slots__ = ("_nodes", "_edges", "_children", "_parents", "_hash")

    def __init__(self, nodes: Iterable[Node] = (), edges: Iterable[SupportEdge] = ()):
        by_name: dict[str, Node] = {}
        for node in nodes:
            if node.name in by_name and by_name[node.name] != node:
                raise ValueError(f"conflicting entries for node {node.name!r}")
            by_name[node.name] = node
        self._nodes = by_name
        self._edges = frozenset(edges)
        children: dict[str, list[str]] = {}
        parents: dict[str, list[SupportEdge]] = {}
        for e in self._edges:
            children.setdefault(e.parent, []).append(e.child)
            parents.setdefault(e.child, []).append(e)
        self._children = {k: tuple(sorted(v)) for k, v in children.items()}
        self._parents = {
            k: tuple(sorted(v, key=lambda e: (e.parent, e.label.value))) for k, v in parents.items()
        }
        self._hash: Optional[int] = None

    # -- basic queries -------------------------------------------------

    @property
    def nodes(self) -> frozenset[Node]:
        return frozenset(self._nodes.values())

    @property
    def edges(self) -> frozenset[SupportEdge]:
        return self._edges

    @property
    def node_names(self) -> frozenset[str]:
        return frozenset(self._nodes)

    def __contains__(self, name: str) -> bool:
        return name in self._nodes

    def node(self, name: str) -> Node:
        try:
            return self._nodes[name]
        except KeyError:
            raise UnknownNodeError(name) from None

    def movables(self) -> list[Node]:
        return [n for _, n in sorted(self._nodes.items()) if n.kind is Kind.MOVABLE]

    def fixtures(self) -> list[Node]:
        return [n for _, n in sorted(self._nodes.items()) if n.kind is Kind.FIXTURE]

    def children_of(self, name: str) -> frozenset[str]:
        """Names directly supported by ``name``; empty for leaves."""
        if name not in self._nodes:
            raise UnknownNodeError(name)
        return frozenset(self._children.get(name, ()))

    def parent_of(self, name: str) -> Optional[tuple[str, Relation]]:
        """The unique supporting (parent, label) for ``name``, or None for roots."""
        if name not in self._nodes:
            raise UnknownNodeError(name)
        edges = self._parents.get(name)
        if not edges:
            return None
        return (edges[0].parent, edges[0].label)

    def parent_edges(self, name: str) -> tuple[SupportEdge, ...]:
        return self._parents.get(name, ())

    def open_names(self) -> frozenset[str]:
        return frozenset(n.name for n in self._nodes.values() if n.is_open)

    # -- value semantics -----------------------------------------------

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SceneGraph):
            return NotImplemented
        return self._nodes == other._nodes and self._edges == other._edges

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((frozenset(self._nodes.values()), self._edges))
        return self._hash

    def __repr__(self) -> str:
        return f"SceneGraph(nodes={len(self._nodes)}, edges={len(self._edges)})"

    # -- derived graphs -------------------------------------------------

    def with_edges(self, edges: Iterable[SupportEdge]) -> "SceneGraph":
        return SceneGraph(self._nodes.values(), edges)

    def with_open_state(self, name: str, is_open: bool) -> "SceneGraph":
        node = self.node(name)
        replaced = [n if n.name != name else node.opened(is_open) for n in self._nodes.values()]
        return SceneGraph(replaced, self._edges)

    # -- validation ------------------------------------------------------

    def validate(self, dictionary: Optional[GlobalDictionary] = None) -> list[Violation]:
        """All broken rules, empty exactly when the graph is well formed.

        Rules: edge endpoints must exist, fixtures are never children, every
        movable has exactly one parent, parent links form a forest rooted at
        fixtures, is_open requires openable, and (with a dictionary) every
        node name must be in it.
        """
        out: list[Violation] = []
        for e in sorted(self._edges, key=lambda e: (e.child, e.parent, e.label.value)):
            for endpoint in (e.child, e.parent):
                if endpoint not in self._nodes:
                    out.append(
                        Violation("unknown-endpoint", endpoint, f"edge {e.child}->{e.parent}")
                    )
        for name, node in sorted(self._nodes.items()):
            n_parents = len(self._parents.get(name, ()))
            if node.kind is Kind.FIXTURE and n_parents > 0:
                out.append(Violation("fixture-child", name, "fixtures cannot rest on anything"))
            if node.kind is Kind.MOVABLE:
                if n_parents == 0:
                    out.append(Violation("orphan-movable", name, "movables cannot float"))
                elif n_parents > 1:
                    out.append(Violation("multiple-parents", name, f"{n_parents} support edges"))
            if node.is_open and not node.openable:
                out.append(Violation("open-not-openable", name))
            if dictionary is not None and name not in dictionary:
                out.append(Violation("not-in-dictionary", name))
        out.extend(self._find_cycles())
        return out

    def _find_cycles(self) -> list[Violation]:
        out = []
        state: dict[str, int] = {}  # 1 = in progress, 2 = done
        for start in sorted(self._nodes):
            if state.get(start):
                continue
            path = []
            cur: Optional[str] = start
            while cur is not None and cur in self._nodes and state.get(cur) is None:
                state[cur] = 1
                path.append(cur)
                nxt = self._parents.get(cur)
                cur = nxt[0].parent if nxt else None
            if cur is not None and state.get(cur) == 1:
                cycle = path[path.index(cur):]
                out.append(Violation("cycle", ",".join(sorted(cycle))))
            for seen in path:
                state[seen] = 2
        return out

    def is_valid(self, dictionary: Optional[GlobalDictionary] = None) -> bool:
        return not self.validate(dictionary)


# -- goal specifications ---------------------------------------------------


@dataclass(frozen=True)
class ExactGraph:
    graph: SceneGraph


@dataclass(frozen=True)
class SingleStack:
    pass


GoalSpec = ExactGraph | SingleStack


@dataclass(frozen=True)
class DiffReport:
    """Set differences between a current and a goal graph."""

    missing_nodes: frozenset[str] = frozenset()
    extra_nodes: frozenset[str] = frozenset()
    missing_edges: frozenset[SupportEdge] = frozenset()
    extra_edges: frozenset[SupportEdge] = frozenset()
    open_state_mismatches: frozenset[str] = frozenset()

    @property
    def matches(self) -> bool:
        return not (
            self.missing_nodes
            or self.extra_nodes
            or self.missing_edges
            or self.extra_edges
            or self.open_state_mismatches
        )


def diff(
    current: SceneGraph, goal: SceneGraph, label_mode: LabelMode = LabelMode.IGNORE_LABEL
) -> DiffReport:
    """Report what separates ``current`` from ``goal``.

    ``missing_*`` are present only in the goal, ``extra_*`` only in the
    current graph. Under IGNORE_LABEL edges are keyed by (child, parent), so
    an in/on disagreement alone does not count as a difference.
    """
    cur_names = current.node_names
    goal_names = goal.node_names
    cur_keys = {e.key(label_mode): e for e in current.edges}
    goal_keys = {e.key(label_mode): e for e in goal.edges}
    open_mismatch = frozenset(
        name
        for name in cur_names & goal_names
        if current.node(name).is_open != goal.node(name).is_open
    )
    return DiffReport(
        missing_nodes=frozenset(goal_names - cur_names),
        extra_nodes=frozenset(cur_names - goal_names),
        missing_edges=frozenset(e for k, e in goal_keys.items() if k not in cur_keys),
        extra_edges=frozenset(e for k, e in cur_keys.items() if k not in goal_keys),
        open_state_mismatches=open_mismatch,
    )


def is_single_stack(g: SceneGraph) -> bool:
    """True when the movables form exactly one fixture-rooted chain."""
    violations = g.validate()
    if violations:
        raise InvalidGraphError(f"graph is not valid: {violations[0]}")
    movables = g.movables()
    if not movables:
        raise InvalidGraphError("single-stack check needs at least one movable")
    fixture_rooted = 0
    for m in movables:
        parent = g.parent_of(m.name)
        assert parent is not None  # valid graph: every movable has a parent
        if g.node(parent[0]).kind is Kind.FIXTURE:
            fixture_rooted += 1
    if fixture_rooted != 1:
        return False
    return all(len(g.children_of(n.name)) <= 1 for n in g.nodes)


def satisfies(
    g: SceneGraph,
    goal: "ExactGraph | SingleStack",
    label_mode: LabelMode = LabelMode.IGNORE_LABEL,
) -> bool:
    """Does ``g`` meet the goal, either an exact target graph or a predicate?"""
    if isinstance(goal, ExactGraph):
        return diff(g, goal.graph, label_mode).matches
    if isinstance(goal, SingleStack):
        return is_single_stack(g)
    raise TypeError(f"unsupported goal spec: {goal!r}")
