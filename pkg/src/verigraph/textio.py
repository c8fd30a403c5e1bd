"""Wire formats: graph blocks, action sequences, feedback objects, corpora.

Graph blocks travel between `<start_graph>` / `<end_graph>` delimiters with a
`Nodes:` line and a `Relations:` line of `<child, label, parent>` triples.
Action sequences travel between `<begin_action_sequence>` /
`<end_action_sequence>` markers, one action per line, optionally followed by
the `<PLAN_COMPLETED>` stop token. Serialization is deterministic so outputs
are byte-stable and usable as prompt material.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

from .actions import Action, Close, Move, Open
from .scene_graph import (
    GlobalDictionary,
    GoalSpec,
    ExactGraph,
    Kind,
    LabelMode,
    Node,
    Relation,
    SceneGraph,
    SingleStack,
    SupportEdge,
    NAME_RE,
)

GRAPH_START = "<start_graph>"
GRAPH_END = "<end_graph>"
ACTIONS_BEGIN = "<begin_action_sequence>"
ACTIONS_END = "<end_action_sequence>"
STOP_TOKEN = "<PLAN_COMPLETED>"

CORPUS_FORMAT_VERSION = 1

# Goal description used in feedback and prompts when the goal is the
# single-stack predicate and no unique goal graph exists.
SINGLE_STACK_GOAL_NOTE = (
    "arrange all movable objects into one single stack; any stacking order is acceptable"
)


class ParseError(ValueError):
    """Base for wire-format errors; carries a character offset or line number."""

    def __init__(self, message: str, offset: Optional[int] = None, line: Optional[int] = None):
        self.offset = offset
        self.line = line
        where = ""
        if line is not None:
            where = f" (line {line})"
        elif offset is not None:
            where = f" (offset {offset})"
        super().__init__(message + where)


class MissingBlock(ParseError):
    pass


class MalformedRelation(ParseError):
    pass


class UnknownRelationLabel(ParseError):
    pass


class UnknownObjectName(ParseError):
    def __init__(self, name: str, offset: Optional[int] = None, line: Optional[int] = None):
        self.name = name
        super().__init__(f"object name not in dictionary: {name!r}", offset=offset, line=line)


class MissingMarkers(ParseError):
    pass


class MalformedAction(ParseError):
    pass


class MalformedFeedback(ParseError):
    pass


class CorpusSchemaError(ValueError):
    def __init__(self, message: str, case_id: Optional[str] = None):
        self.case_id = case_id
        prefix = f"case {case_id!r}: " if case_id else ""
        super().__init__(prefix + message)


# -- scene graph blocks -----------------------------------------------------

_BLOCK_RE = re.compile(re.escape(GRAPH_START) + r"(.*?)" + re.escape(GRAPH_END), re.DOTALL)
_HEADER_RE = re.compile(r"^[ \t]*(nodes|relations|open)[ \t]*:", re.IGNORECASE | re.MULTILINE)


def _split_sections(block: str, base: int) -> dict[str, tuple[str, int]]:
    """Map header name -> (payload text, payload offset in the full input)."""
    headers = list(_HEADER_RE.finditer(block))
    sections: dict[str, tuple[str, int]] = {}
    for i, m in enumerate(headers):
        end = headers[i + 1].start() if i + 1 < len(headers) else len(block)
        name = m.group(1).lower()
        sections[name] = (block[m.end():end], base + m.end())
    return sections


def _parse_name_list(payload: str, base: int, what: str) -> list[tuple[str, int]]:
    names: list[tuple[str, int]] = []
    for m in re.finditer(r"[^,]+", payload):
        token = m.group().strip()
        if not token:
            continue
        if not NAME_RE.match(token):
            raise MalformedRelation(
                f"malformed {what} name {token!r}", offset=base + m.start()
            )
        names.append((token, base + m.start()))
    return names


def _parse_relations(payload: str, base: int) -> list[tuple[SupportEdge, int]]:
    edges: list[tuple[SupportEdge, int]] = []
    pos = 0
    while pos < len(payload):
        ch = payload[pos]
        if ch in " \t\r\n,":
            pos += 1
            continue
        if ch != "<":
            snippet = payload[pos:pos + 20].splitlines()[0]
            raise MalformedRelation(
                f"relations must be wrapped in <>, found {snippet!r}", offset=base + pos
            )
        end = payload.find(">", pos)
        if end == -1:
            raise MalformedRelation("unterminated relation", offset=base + pos)
        parts = payload[pos + 1:end].split(",")
        if len(parts) != 3:
            raise MalformedRelation(
                f"relation needs 3 comma-separated fields, got {len(parts)}",
                offset=base + pos,
            )
        child, label, parent = (p.strip() for p in parts)
        label_key = label.lower()
        if label_key not in ("in", "on"):
            raise UnknownRelationLabel(f"unknown relation label {label!r}", offset=base + pos)
        for name in (child, parent):
            if not NAME_RE.match(name):
                raise MalformedRelation(f"malformed object name {name!r}", offset=base + pos)
        if child == parent:
            raise MalformedRelation(f"relation relates {child!r} to itself", offset=base + pos)
        edges.append((SupportEdge(child, Relation(label_key), parent), base + pos))
        pos = end + 1
    return edges


def parse_scene_graph(text: str, dictionary: Optional[GlobalDictionary] = None) -> SceneGraph:
    """Parse the last graph block in ``text`` into a SceneGraph.

    Node kinds and openable flags come from ``dictionary`` when given (names
    outside it are rejected); without one, kinds are inferred structurally:
    anything that appears as a child of a relation is movable, everything else
    is a fixture. Open state is read from the optional ``Open:`` line.
    """
    blocks = list(_BLOCK_RE.finditer(text))
    if not blocks:
        raise MissingBlock(f"no {GRAPH_START}...{GRAPH_END} block found")
    m = blocks[-1]
    block, base = m.group(1), m.start(1)
    sections = _split_sections(block, base)
    if "nodes" not in sections:
        raise MissingBlock("graph block has no Nodes: line", offset=base)
    names = _parse_name_list(*sections["nodes"], what="node")
    edges = (
        _parse_relations(*sections["relations"]) if "relations" in sections else []
    )
    open_names = {
        n for n, _ in _parse_name_list(*sections["open"], what="open")
    } if "open" in sections else set()

    if dictionary is not None:
        for name, offset in names:
            if name not in dictionary:
                raise UnknownObjectName(name, offset=offset)
        for edge, offset in edges:
            for endpoint in (edge.child, edge.parent):
                if endpoint not in dictionary:
                    raise UnknownObjectName(endpoint, offset=offset)
        nodes = [dictionary.node_for(name, is_open=name in open_names) for name, _ in names]
    else:
        children = {e.child for e, _ in edges}
        nodes = [
            Node(
                name,
                Kind.MOVABLE if name in children else Kind.FIXTURE,
                openable=name in open_names,
                is_open=name in open_names,
            )
            for name, _ in names
        ]
    return SceneGraph(nodes, [e for e, _ in edges])


def serialize_scene_graph(g: SceneGraph) -> str:
    """Render ``g`` as a graph block: nodes sorted by name, relations sorted
    by (child, parent). An ``Open:`` line is added only when some node is
    open, since the base format has no open-state channel."""
    names = ", ".join(sorted(g.node_names))
    rels = ", ".join(
        f"<{e.child}, {e.label.value}, {e.parent}>"
        for e in sorted(g.edges, key=lambda e: (e.child, e.parent, e.label.value))
    )
    lines = [GRAPH_START, f"Nodes: {names}".rstrip(), f"Relations: {rels}".rstrip()]
    open_names = sorted(g.open_names())
    if open_names:
        lines.append(f"Open: {', '.join(open_names)}")
    lines.append(GRAPH_END)
    return "\n".join(lines)


# -- actions ----------------------------------------------------------------

_ACTION_RE = re.compile(r"\A\s*([A-Za-z_]+)\s*\(([^()]*)\)\s*\Z")
_VERB_ARITY = {"move": 3, "open": 1, "close": 1}


def parse_action(token: str, line: Optional[int] = None) -> Action:
    """Parse one ``verb(args)`` action string; verbs and names are lowercase."""
    at = len(token) - len(token.lstrip())
    m = _ACTION_RE.match(token)
    if not m:
        raise MalformedAction(f"not an action: {token.strip()!r}", offset=at, line=line)
    verb, raw_args = m.group(1), m.group(2)
    if verb != verb.lower():
        raise MalformedAction(f"action verbs must be lowercase: {verb!r}", offset=at, line=line)
    if verb not in _VERB_ARITY:
        raise MalformedAction(f"unknown action verb {verb!r}", offset=at, line=line)
    args = [a.strip() for a in raw_args.split(",")] if raw_args.strip() else []
    if len(args) != _VERB_ARITY[verb]:
        raise MalformedAction(
            f"{verb} takes {_VERB_ARITY[verb]} arguments, got {len(args)}",
            offset=at,
            line=line,
        )
    for a in args:
        if not NAME_RE.match(a):
            raise MalformedAction(f"malformed object name {a!r}", offset=at, line=line)
    try:
        if verb == "move":
            return Move(*args)
        if verb == "open":
            return Open(args[0])
        return Close(args[0])
    except ValueError as exc:
        raise MalformedAction(str(exc), offset=at, line=line) from None


def serialize_action(action: Action) -> str:
    if isinstance(action, Move):
        return f"move({action.obj}, {action.src}, {action.dst})"
    if isinstance(action, Open):
        return f"open({action.obj})"
    if isinstance(action, Close):
        return f"close({action.obj})"
    raise TypeError(f"unsupported action: {action!r}")


_ACTION_BLOCK_RE = re.compile(
    re.escape(ACTIONS_BEGIN) + r"(.*?)" + re.escape(ACTIONS_END), re.DOTALL
)


def _parse_action_body(text: str, body_start: int, body: str) -> list[Action]:
    actions = []
    line_no = text.count("\n", 0, body_start) + 1
    for i, raw in enumerate(body.split("\n")):
        if raw.strip():
            actions.append(parse_action(raw, line=line_no + i))
    return actions


def extract_all_action_sequences(text: str) -> list[tuple[list[Action], bool]]:
    """Every marker-delimited action block in order, each with its stop flag.

    A block's stop flag is true when the stop token appears after its end
    marker and before the next block (or end of input).
    """
    matches = list(_ACTION_BLOCK_RE.finditer(text))
    if not matches:
        raise MissingMarkers(
            f"no {ACTIONS_BEGIN}...{ACTIONS_END} block found"
        )
    out = []
    for i, m in enumerate(matches):
        tail_end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        actions = _parse_action_body(text, m.start(1), m.group(1))
        stop = STOP_TOKEN in text[m.end():tail_end]
        out.append((actions, stop))
    return out


def extract_action_sequence(text: str) -> tuple[list[Action], bool]:
    """Actions of the last marker-delimited block in ``text`` plus stop flag.

    The last block wins because model responses tend to echo the format
    example from the instructions before emitting the real sequence.
    """
    return extract_all_action_sequences(text)[-1]


# -- feedback ---------------------------------------------------------------

FEEDBACK_FIELDS = (
    "goal_graph_relations",
    "current_graph_relations",
    "last_provided_steps",
    "failed_at_step",
    "failure_reason",
    "executed_so_far",
)


@dataclass(frozen=True)
class Feedback:
    """The simulator's per-turn message back to the planner.

    ``goal_graph_relations`` is a list of relation strings for exact goals or
    a single descriptive string for predicate goals. ``failed_at_step`` and
    ``failure_reason`` are None when the whole previous sequence executed.
    """

    goal_graph_relations: Union[list[str], str]
    current_graph_relations: list[str]
    last_provided_steps: list[str]
    failed_at_step: Optional[str]
    failure_reason: Optional[str]
    executed_so_far: list[str]


def render_relation(edge: SupportEdge, label_mode: LabelMode = LabelMode.IGNORE_LABEL) -> str:
    label = "on" if label_mode is LabelMode.IGNORE_LABEL else edge.label.value
    return f"<{edge.child}, {label}, {edge.parent}>"


def render_relations(g: SceneGraph, label_mode: LabelMode = LabelMode.IGNORE_LABEL) -> list[str]:
    return [
        render_relation(e, label_mode)
        for e in sorted(g.edges, key=lambda e: (e.child, e.parent, e.label.value))
    ]


def serialize_feedback(f: Feedback) -> str:
    obj = {name: getattr(f, name) for name in FEEDBACK_FIELDS}
    return json.dumps(obj, indent=2)


def parse_feedback(text: str) -> Feedback:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFeedback(f"feedback is not valid JSON: {exc}", line=exc.lineno) from None
    if not isinstance(obj, dict):
        raise MalformedFeedback("feedback must be a JSON object")
    missing = [k for k in FEEDBACK_FIELDS if k not in obj]
    extra = [k for k in obj if k not in FEEDBACK_FIELDS]
    if missing or extra:
        raise MalformedFeedback(f"feedback fields wrong: missing={missing} extra={extra}")
    return Feedback(**{k: obj[k] for k in FEEDBACK_FIELDS})


# -- scene cases and corpora --------------------------------------------------


class TaskKind(Enum):
    STACKING = "stacking"
    LANGUAGE = "language"
    REFERENCE_IMAGE = "reference_image"


@dataclass(frozen=True)
class SceneCase:
    """One benchmark case: an initial scene, a goal, and the vocabulary."""

    id: str
    initial: SceneGraph
    goal: GoalSpec
    task_kind: TaskKind
    dictionary: GlobalDictionary
    instruction: Optional[str] = None

    def __post_init__(self) -> None:
        if (self.instruction is not None) != (self.task_kind is TaskKind.LANGUAGE):
            raise ValueError("instruction is required for language tasks and only for them")


def _case_to_mapping(case: SceneCase) -> dict:
    goal: dict
    if isinstance(case.goal, ExactGraph):
        goal = {"kind": "exact", "graph": serialize_scene_graph(case.goal.graph)}
    else:
        goal = {"kind": "single_stack"}
    out = {
        "id": case.id,
        "task_kind": case.task_kind.value,
        "dictionary": case.dictionary.to_mapping(),
        "initial": serialize_scene_graph(case.initial),
        "goal": goal,
    }
    if case.instruction is not None:
        out["instruction"] = case.instruction
    return out


def _case_from_mapping(data: dict) -> SceneCase:
    case_id = str(data.get("id", "<missing id>"))
    try:
        dictionary = GlobalDictionary.from_mapping(data["dictionary"])
        initial = parse_scene_graph(data["initial"], dictionary)
        goal_data = data["goal"]
        goal: GoalSpec
        if goal_data["kind"] == "exact":
            goal = ExactGraph(parse_scene_graph(goal_data["graph"], dictionary))
        elif goal_data["kind"] == "single_stack":
            goal = SingleStack()
        else:
            raise CorpusSchemaError(f"unknown goal kind {goal_data['kind']!r}", case_id)
        case = SceneCase(
            id=str(data["id"]),
            initial=initial,
            goal=goal,
            task_kind=TaskKind(data["task_kind"]),
            dictionary=dictionary,
            instruction=data.get("instruction"),
        )
    except CorpusSchemaError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusSchemaError(str(exc), case_id) from exc
    for label, graph in [("initial", case.initial)] + (
        [("goal", case.goal.graph)] if isinstance(case.goal, ExactGraph) else []
    ):
        violations = graph.validate(dictionary)
        if violations:
            raise CorpusSchemaError(f"{label} graph invalid: {violations[0]}", case_id)
    return case


def corpus_to_document(cases: Sequence[SceneCase]) -> dict:
    return {
        "format_version": CORPUS_FORMAT_VERSION,
        "cases": [_case_to_mapping(c) for c in cases],
    }


def corpus_from_document(doc: dict) -> list[SceneCase]:
    if not isinstance(doc, dict):
        raise CorpusSchemaError("corpus document must be a JSON object")
    version = doc.get("format_version")
    if version != CORPUS_FORMAT_VERSION:
        raise CorpusSchemaError(f"unsupported format_version {version!r}")
    cases_data = doc.get("cases")
    if not isinstance(cases_data, list):
        raise CorpusSchemaError("corpus document needs a 'cases' array")
    cases = [_case_from_mapping(c) for c in cases_data]
    seen = set()
    for case in cases:
        if case.id in seen:
            raise CorpusSchemaError("duplicate case id", case.id)
        seen.add(case.id)
    return cases


def save_scene_corpus(cases: Sequence[SceneCase], path: Union[str, Path]) -> None:
    Path(path).write_text(
        json.dumps(corpus_to_document(cases), indent=2) + "\n", encoding="utf-8"
    )


def load_scene_corpus(path: Union[str, Path]) -> list[SceneCase]:
    raw = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CorpusSchemaError(f"corpus file is not valid JSON: {exc}") from None
    return corpus_from_document(doc)
