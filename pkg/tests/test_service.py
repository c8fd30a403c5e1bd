from __future__ import annotations

import base64
import json
import warnings
from pathlib import Path

import pytest

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    from fastapi.testclient import TestClient

from verigraph.service.app import create_app

FIXTURES = Path(__file__).parent / "fixtures"

INIT_GRAPH = (
    "<start_graph>\nNodes: cup, plate, shelf, table\n"
    "Relations: <cup, on, plate>, <plate, on, table>\n<end_graph>"
)
GOAL_GRAPH = (
    "<start_graph>\nNodes: cup, plate, shelf, table\n"
    "Relations: <cup, on, table>, <plate, on, shelf>\n<end_graph>"
)
DICTIONARY = {
    "table": {"kind": "fixture"},
    "shelf": {"kind": "fixture"},
    "plate": {"kind": "movable"},
    "cup": {"kind": "movable"},
}


@pytest.fixture(scope="module")
def client():
    with TestClient(create_app()) as c:
        yield c


def test_health(client):
    body = client.get("/health").json()
    assert body["status"] == "ok"


class TestGraphEndpoints:
    def test_parse_ok(self, client):
        r = client.post(
            "/graph/parse", json={"text": INIT_GRAPH, "dictionary": DICTIONARY}
        )
        assert r.status_code == 200
        body = r.json()
        assert body["nodes"] == ["cup", "plate", "shelf", "table"]
        assert body["relations"] == ["<cup, on, plate>", "<plate, on, table>"]
        assert body["violations"] == []
        assert body["graph"].startswith("<start_graph>")

    def test_parse_reports_violations(self, client):
        text = "<start_graph>\nNodes: cup, table\nRelations:\n<end_graph>"
        body = client.post("/graph/parse", json={"text": text, "dictionary": DICTIONARY}).json()
        assert any("orphan-movable" in v for v in body["violations"])

    def test_parse_error_is_400(self, client):
        r = client.post("/graph/parse", json={"text": "no block here"})
        assert r.status_code == 400
        assert r.json()["error_type"] == "MissingBlock"

    def test_unknown_name_is_400(self, client):
        text = "<start_graph>\nNodes: rocket\nRelations:\n<end_graph>"
        r = client.post("/graph/parse", json={"text": text, "dictionary": DICTIONARY})
        assert r.status_code == 400
        assert r.json()["error_type"] == "UnknownObjectName"

    def test_diff(self, client):
        r = client.post(
            "/graph/diff",
            json={"current": INIT_GRAPH, "goal": GOAL_GRAPH, "dictionary": DICTIONARY},
        )
        body = r.json()
        assert body["matches"] is False
        assert "<plate, on, shelf>" in body["missing_edges"]
        assert "<cup, on, plate>" in body["extra_edges"]

    def test_diff_identity(self, client):
        body = client.post(
            "/graph/diff", json={"current": INIT_GRAPH, "goal": INIT_GRAPH}
        ).json()
        assert body["matches"] is True


class TestSimulate:
    def test_success(self, client):
        actions = "move(cup, plate, table)\nmove(plate, table, shelf)"
        body = client.post(
            "/simulate",
            json={"graph": INIT_GRAPH, "actions": actions, "dictionary": DICTIONARY},
        ).json()
        assert body["ok"] is True
        assert body["executed"] == ["move(cup, plate, table)", "move(plate, table, shelf)"]
        assert "<plate, on, shelf>" in body["final_graph"]

    def test_failure_reports_code(self, client):
        body = client.post(
            "/simulate",
            json={
                "graph": INIT_GRAPH,
                "actions": "move(plate, table, shelf)",
                "dictionary": DICTIONARY,
            },
        ).json()
        assert body["ok"] is False
        assert body["failure_reason"] == "STILL_HAS_CHILDREN"
        assert body["failed_at_step"] == "move(plate, table, shelf)"
        assert body["executed"] == []

    def test_accepts_action_block_format(self, client):
        actions = (
            "<begin_action_sequence>\nmove(cup, plate, table)\n"
            "<end_action_sequence>\n<PLAN_COMPLETED>"
        )
        body = client.post(
            "/simulate", json={"graph": INIT_GRAPH, "actions": actions}
        ).json()
        assert body["ok"] is True

    def test_malformed_action_is_400(self, client):
        r = client.post(
            "/simulate", json={"graph": INIT_GRAPH, "actions": "1. move(a, b, c)"}
        )
        assert r.status_code == 400
        assert r.json()["error_type"] == "MalformedAction"


class TestPlan:
    def test_search_backend(self, client):
        r = client.post(
            "/plan",
            json={
                "initial": INIT_GRAPH,
                "goal": {"kind": "exact", "graph": GOAL_GRAPH},
                "dictionary": DICTIONARY,
            },
        )
        body = r.json()
        assert body["success"] is True
        assert body["outcome"] == "success"
        assert body["executed"] == ["move(cup, plate, table)", "move(plate, table, shelf)"]
        assert body["actions_block"].endswith("<PLAN_COMPLETED>")

    def test_scripted_backend(self, client):
        script = (
            "<begin_action_sequence>\nmove(cup, plate, table)\nmove(plate, table, shelf)\n"
            "<end_action_sequence>\n"
            "<begin_action_sequence>\n<end_action_sequence>\n<PLAN_COMPLETED>"
        )
        body = client.post(
            "/plan",
            json={
                "initial": INIT_GRAPH,
                "goal": {"kind": "exact", "graph": GOAL_GRAPH},
                "backend": {"kind": "scripted", "script": script},
            },
        ).json()
        assert body["success"] is True
        assert body["turns"] == 2

    def test_llm_backend_replays_cassette(self, client):
        cassette = json.loads((FIXTURES / "cassettes" / "planner_session.json").read_text())
        body = client.post(
            "/plan",
            json={
                "initial": INIT_GRAPH,
                "goal": {"kind": "exact", "graph": GOAL_GRAPH},
                "dictionary": DICTIONARY,
                "backend": {"kind": "llm", "cassette": cassette},
            },
        ).json()
        assert body["success"] is True
        assert body["error_count"] == 1
        assert len(body["executed"]) == 2

    def test_llm_backend_without_cassette_is_400(self, client):
        r = client.post(
            "/plan",
            json={
                "initial": INIT_GRAPH,
                "goal": {"kind": "exact", "graph": GOAL_GRAPH},
                "backend": {"kind": "llm"},
            },
        )
        assert r.status_code == 400
        assert "cassette" in r.json()["detail"]

    def test_single_stack_goal(self, client):
        blocks = (
            "<start_graph>\nNodes: block_a, block_b, table\n"
            "Relations: <block_a, on, table>, <block_b, on, table>\n<end_graph>"
        )
        body = client.post(
            "/plan", json={"initial": blocks, "goal": {"kind": "single_stack"}}
        ).json()
        assert body["success"] is True

    def test_fail_first_wrapping(self, client):
        body = client.post(
            "/plan",
            json={
                "initial": INIT_GRAPH,
                "goal": {"kind": "exact", "graph": GOAL_GRAPH},
                "backend": {"kind": "search", "fail_first": 2},
                "params": {"t": 2},
            },
        ).json()
        assert body["outcome"] == "error_threshold_reached"
        assert body["error_count"] == 2


class TestSgg:
    def test_instruction_generation_from_cassette(self, client):
        cassette = json.loads((FIXTURES / "cassettes" / "sgg_instruction.json").read_text())
        initial = (
            "<start_graph>\nNodes: butter, counter, fridge, pan, pot, stovetop\n"
            "Relations: <butter, in, fridge>, <pan, on, counter>, <pot, on, stovetop>\n"
            "<end_graph>"
        )
        body = client.post(
            "/sgg/generate",
            json={
                "dictionary": {
                    "counter": {"kind": "fixture"},
                    "stovetop": {"kind": "fixture"},
                    "fridge": {"kind": "fixture", "openable": True},
                    "pan": {"kind": "movable"},
                    "pot": {"kind": "movable"},
                    "butter": {"kind": "movable"},
                },
                "instruction": "move pan to the stovetop",
                "initial": initial,
                "cassette": cassette,
            },
        ).json()
        assert "<pan, on, stovetop>" in body["graph"]

    def test_image_generation_from_cassette(self, client):
        cassette = json.loads((FIXTURES / "cassettes" / "sgg_image.json").read_text())
        image_b64 = base64.b64encode((FIXTURES / "blocks.png").read_bytes()).decode()
        body = client.post(
            "/sgg/generate",
            json={
                "dictionary": {
                    "table": {"kind": "fixture"},
                    "block_red": {"kind": "movable"},
                    "block_green": {"kind": "movable"},
                    "block_blue": {"kind": "movable"},
                },
                "image_b64": image_b64,
                "cassette": cassette,
            },
        ).json()
        assert "<block_green, on, block_red>" in body["graph"]

    def test_cassette_miss_is_502(self, client):
        body_request = {
            "dictionary": {"table": {"kind": "fixture"}},
            "instruction": "anything",
            "initial": "<start_graph>\nNodes: table\nRelations:\n<end_graph>",
            "cassette": {},
        }
        r = client.post("/sgg/generate", json=body_request)
        assert r.status_code == 502
        assert r.json()["error_type"] == "CassetteMiss"


class TestCorpusBenchAblate:
    def gen(self, client, **overrides):
        payload = {"n_cases": 4, "seed": 5, "n_movables_max": 4}
        payload.update(overrides)
        return client.post("/corpus/generate", json=payload).json()

    def test_generate_is_deterministic(self, client):
        assert self.gen(client) == self.gen(client)

    def test_bench(self, client):
        corpus = self.gen(client)["corpus"]
        body = client.post(
            "/bench", json={"corpus": corpus, "backend": {"kind": "search"}, "jobs": 2}
        ).json()
        assert body["success_rate"] == 1.0
        assert "success rate: 1.000 (4/4)" in body["table"]
        assert len(body["report"]["cases"]) == 4

    def test_bench_rejects_bad_corpus(self, client):
        r = client.post("/bench", json={"corpus": {"format_version": 99, "cases": []}})
        assert r.status_code == 400
        assert r.json()["error_type"] == "CorpusSchemaError"

    def test_ablate_threshold_shape(self, client):
        corpus = self.gen(client, n_cases=3)["corpus"]
        body = client.post(
            "/ablate",
            json={
                "corpus": corpus,
                "backend": {"kind": "search", "fail_first": 1},
                "taus": [1, 2],
                "ks": [3],
            },
        ).json()
        assert body["cells"] == {"1,3": 0.0, "2,3": 1.0}
        assert "error threshold" in body["table"]
