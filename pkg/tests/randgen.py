"""Seeded random scenes, mutations, and action sequences for the test suite."""

from __future__ import annotations

import random

from verigraph.actions import Action, Close, Move, Open
from verigraph.scene_graph import (
    DictEntry,
    GlobalDictionary,
    Kind,
    Node,
    Relation,
    SceneGraph,
    SupportEdge,
)

FIXTURE_POOL = ["table", "shelf", "counter", "fridge", "cabinet", "stovetop"]


def random_dictionary(
    rng: random.Random,
    n_movables: int,
    n_fixtures: int = 2,
    openable_fraction: float = 0.25,
) -> GlobalDictionary:
    entries = {}
    for name in FIXTURE_POOL[:n_fixtures]:
        entries[name] = DictEntry(Kind.FIXTURE, openable=name in ("fridge", "cabinet"))
    for i in range(n_movables):
        entries[f"obj_{i}"] = DictEntry(
            Kind.MOVABLE, openable=rng.random() < openable_fraction
        )
    return GlobalDictionary(entries)


def random_graph(
    rng: random.Random,
    dictionary: GlobalDictionary,
    canonical_labels: bool = True,
    open_fraction: float = 0.3,
) -> SceneGraph:
    """A valid scene over the dictionary: every movable placed on something."""
    nodes: list[Node] = []
    placed: list[str] = []
    edges: list[SupportEdge] = []
    fixtures = [n for n in dictionary if dictionary.entry(n).kind is Kind.FIXTURE]
    movables = [n for n in dictionary if dictionary.entry(n).kind is Kind.MOVABLE]
    for name in fixtures:
        e = dictionary.entry(name)
        nodes.append(Node(name, e.kind, e.openable, e.openable and rng.random() < open_fraction))
    for name in movables:
        e = dictionary.entry(name)
        nodes.append(Node(name, e.kind, e.openable, e.openable and rng.random() < open_fraction))
        parent = rng.choice(fixtures + placed)
        if canonical_labels:
            label = Relation.IN if dictionary.entry(parent).openable else Relation.ON
        else:
            label = rng.choice([Relation.IN, Relation.ON])
        edges.append(SupportEdge(name, label, parent))
        placed.append(name)
    return SceneGraph(nodes, edges)


def random_action(rng: random.Random, g: SceneGraph, legal: bool) -> Action:
    """One action over the current graph, legal or deliberately broken."""
    names = sorted(g.node_names)
    movable = [n.name for n in g.movables()]
    childless = [m for m in movable if not g.children_of(m)]
    if legal:
        choices = []
        for m in childless:
            parent = g.parent_of(m)
            if parent:
                dsts = [d for d in names if d not in (m, parent[0])]
                if dsts:
                    choices.append(Move(m, parent[0], rng.choice(dsts)))
        for n in g.nodes:
            if n.openable and not n.is_open:
                choices.append(Open(n.name))
            if n.openable and n.is_open:
                choices.append(Close(n.name))
        if choices:
            return rng.choice(choices)
        legal = False  # fall through: nothing legal exists
    kind = rng.randrange(6)
    if kind == 0 and movable:
        m = rng.choice(movable)
        wrong = [n for n in names if n != m and (g.parent_of(m) or ("",))[0] != n]
        if wrong:
            return Move(m, rng.choice(wrong), rng.choice([n for n in names if n != m]))
    if kind == 1 and movable:
        m = rng.choice(movable)
        parent = g.parent_of(m)
        return Move(m, parent[0] if parent else "table", "ghost_node")
    if kind == 2:
        return Move("phantom_obj", rng.choice(names), rng.choice(names))
    if kind == 3:
        stacked = [m for m in movable if g.children_of(m)]
        if stacked:
            m = rng.choice(stacked)
            parent = g.parent_of(m)
            dsts = [n for n in names if n not in (m, (parent or ("",))[0])]
            if parent and dsts:
                return Move(m, parent[0], rng.choice(dsts))
    if kind == 4:
        solid = [n.name for n in g.nodes if not n.openable]
        if solid:
            return rng.choice([Open(rng.choice(solid)), Close(rng.choice(solid))])
    closed = [n.name for n in g.nodes if n.openable and not n.is_open]
    if closed:
        return Close(rng.choice(closed))
    return Open("phantom_obj")


def random_sequence(
    rng: random.Random, g: SceneGraph, length: int, illegal_rate: float = 0.25
) -> list[Action]:
    """Action sequence tracking state through its legal prefix."""
    from verigraph.actions import apply_action, check_action

    out: list[Action] = []
    current = g
    broken = False
    for _ in range(length):
        if broken:
            action = random_action(rng, current, legal=rng.random() < 0.5)
        else:
            action = random_action(rng, current, legal=rng.random() >= illegal_rate)
        out.append(action)
        if not broken:
            if check_action(current, action) is None:
                current = apply_action(current, action)
            else:
                broken = True
    return out
