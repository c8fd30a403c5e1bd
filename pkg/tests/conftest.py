from __future__ import annotations

import pytest

from verigraph.scene_graph import (
    DictEntry,
    GlobalDictionary,
    Kind,
    Node,
    Relation,
    SceneGraph,
    SupportEdge,
)


def edge(child: str, label: str, parent: str) -> SupportEdge:
    return SupportEdge(child, Relation(label), parent)


@pytest.fixture
def table_dictionary() -> GlobalDictionary:
    return GlobalDictionary(
        {
            "table": DictEntry(Kind.FIXTURE),
            "shelf": DictEntry(Kind.FIXTURE),
            "plate": DictEntry(Kind.MOVABLE),
            "cup": DictEntry(Kind.MOVABLE),
            "spoon": DictEntry(Kind.MOVABLE),
        }
    )


@pytest.fixture
def stacked_scene(table_dictionary) -> SceneGraph:
    """cup on plate, plate on table; an empty shelf on the side."""
    d = table_dictionary
    return SceneGraph(
        [d.node_for(n) for n in ("table", "shelf", "plate", "cup")],
        [edge("cup", "on", "plate"), edge("plate", "on", "table")],
    )


@pytest.fixture
def kitchen_dictionary() -> GlobalDictionary:
    return GlobalDictionary(
        {
            "counter": DictEntry(Kind.FIXTURE),
            "stovetop": DictEntry(Kind.FIXTURE),
            "fridge": DictEntry(Kind.FIXTURE, openable=True),
            "pan": DictEntry(Kind.MOVABLE),
            "pot": DictEntry(Kind.MOVABLE),
            "butter": DictEntry(Kind.MOVABLE),
            "block_red": DictEntry(Kind.MOVABLE),
        }
    )


@pytest.fixture
def kitchen_scene(kitchen_dictionary) -> SceneGraph:
    d = kitchen_dictionary
    return SceneGraph(
        [d.node_for(n) for n in ("counter", "stovetop", "fridge", "pan", "pot", "butter", "block_red")],
        [
            edge("pan", "on", "counter"),
            edge("pot", "on", "stovetop"),
            edge("butter", "in", "fridge"),
            edge("block_red", "on", "counter"),
        ],
    )


@pytest.fixture
def blocks_dictionary() -> GlobalDictionary:
    return GlobalDictionary(
        {
            "table": DictEntry(Kind.FIXTURE),
            **{f"block_{c}": DictEntry(Kind.MOVABLE) for c in "abcde"},
        }
    )


def blocks_scene(dictionary: GlobalDictionary, placement: dict[str, str]) -> SceneGraph:
    nodes = [dictionary.node_for(n) for n in sorted(dictionary.names)]
    edges = [edge(c, "on", p) for c, p in sorted(placement.items())]
    present = set(placement) | set(placement.values()) | {"table"}
    return SceneGraph([n for n in nodes if n.name in present], edges)
