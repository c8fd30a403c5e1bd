from __future__ import annotations

import random

import pytest

from randgen import random_action, random_dictionary, random_graph
from refimpl import graph_to_doc, naive_shortest_length
from verigraph.actions import Move, Open, apply_action, check_action
from verigraph.planner import (
    BudgetExhausted,
    DestinationPolicy,
    FaultInjectingBackend,
    Optimality,
    PlannerContext,
    PlannerTurn,
    PlanningFailed,
    ScriptExhausted,
    SearchBackend,
    SearchConfig,
    ScriptedBackend,
    scripted_backend,
    scripted_backend_from_text,
    search_plan,
    verify_plan,
)
from verigraph.scene_graph import (
    DictEntry,
    ExactGraph,
    GlobalDictionary,
    Kind,
    SceneGraph,
    SingleStack,
)

from conftest import blocks_scene, edge


def scramble(rng: random.Random, g: SceneGraph, steps: int) -> SceneGraph:
    current = g
    for _ in range(steps):
        action = random_action(rng, current, legal=True)
        if check_action(current, action) is None:
            current = apply_action(current, action)
    return current


def ctx_for(g, goal, k=3, initial=None) -> PlannerContext:
    return PlannerContext(initial=initial or g, goal=goal, current=g, k=k)


class TestSearchPlan:
    def test_init_equals_goal(self, kitchen_scene):
        assert search_plan(kitchen_scene, ExactGraph(kitchen_scene)) == []

    def test_swap_support_needs_three_moves(self, table_dictionary):
        d = table_dictionary
        nodes = [d.node_for(n) for n in ("table", "shelf", "plate", "cup")]
        init = SceneGraph(nodes, [edge("cup", "on", "plate"), edge("plate", "on", "table")])
        goal = SceneGraph(nodes, [edge("cup", "on", "plate"), edge("plate", "on", "shelf")])
        plan = search_plan(init, ExactGraph(goal))
        assert plan is not None and len(plan) == 3
        assert verify_plan(init, ExactGraph(goal), plan)
        # cross-check minimality with the sequence-space enumerator
        assert naive_shortest_length(graph_to_doc(init), graph_to_doc(goal), 3) == 3

    def test_stack_merge_with_free_top_is_one_move(self, blocks_dictionary):
        # a 2-block stack plus a lone block: the lone block tops the stack
        init = blocks_scene(
            blocks_dictionary,
            {"block_a": "table", "block_b": "block_a", "block_c": "table"},
        )
        cfg = SearchConfig(max_children_per_node=1)
        plan = search_plan(init, SingleStack(), cfg)
        assert plan is not None and len(plan) == 1
        assert verify_plan(init, SingleStack(), plan)
        assert naive_shortest_length(graph_to_doc(init), "single_stack", 2) == 1

    def test_two_two_block_stacks_merge_in_two_moves(self, blocks_dictionary):
        # moving one stack's top leaves its base as a second chain, so a
        # second move is always needed; both oracles agree on length 2
        init = blocks_scene(
            blocks_dictionary,
            {"block_a": "table", "block_b": "block_a", "block_c": "table", "block_d": "block_c"},
        )
        cfg = SearchConfig(max_children_per_node=1)
        plan = search_plan(init, SingleStack(), cfg)
        assert plan is not None and len(plan) == 2
        assert verify_plan(init, SingleStack(), plan)
        assert naive_shortest_length(graph_to_doc(init), "single_stack", 3) == 2

    @pytest.mark.parametrize("seed", range(20))
    def test_plans_always_verify(self, seed):
        rng = random.Random(seed)
        d = random_dictionary(rng, n_movables=rng.randint(3, 7), n_fixtures=3)
        init = random_graph(rng, d, open_fraction=0.2)
        goal = ExactGraph(scramble(rng, init, rng.randint(1, 8)))
        plan = search_plan(init, goal)
        assert plan is not None
        assert verify_plan(init, goal, plan)

    @pytest.mark.parametrize("seed", range(12))
    def test_shortest_matches_naive_enumerator(self, seed):
        rng = random.Random(seed)
        d = random_dictionary(rng, n_movables=rng.randint(2, 4), n_fixtures=2)
        init = random_graph(rng, d, open_fraction=0)
        goal = ExactGraph(scramble(rng, init, rng.randint(1, 3)))
        plan = search_plan(init, goal)
        assert plan is not None
        expected = naive_shortest_length(graph_to_doc(init), graph_to_doc(goal.graph), 4)
        assert expected is not None and len(plan) == expected

    @pytest.mark.parametrize("seed", range(15))
    def test_complete_for_valid_exact_goals(self, seed):
        """Any valid goal over the same nodes is reachable and found."""
        rng = random.Random(seed)
        d = random_dictionary(rng, n_movables=rng.randint(2, 5), n_fixtures=2)
        init = random_graph(rng, d, open_fraction=0.3)
        goal = ExactGraph(random_graph(rng, d, open_fraction=0.3))
        plan = search_plan(init, goal)
        assert plan is not None
        assert verify_plan(init, goal, plan)

    def test_node_set_mismatch_is_unreachable(self, blocks_dictionary, kitchen_scene):
        init = blocks_scene(blocks_dictionary, {"block_a": "table"})
        assert search_plan(init, ExactGraph(kitchen_scene)) is None

    def test_unreachable_open_flag_returns_none(self, blocks_dictionary):
        init = blocks_scene(blocks_dictionary, {"block_a": "table"})
        target = SceneGraph(
            [
                n if n.name != "block_a" else n
                for n in init.nodes
            ],
            init.edges,
        )
        # same nodes but the goal demands an open flag nothing can set
        weird = SceneGraph(
            [
                n.opened(True) if n.name == "block_a" else n
                for n in target.nodes
            ],
            target.edges,
        )
        assert search_plan(init, ExactGraph(weird)) is None

    def test_budget_exhausted_is_distinct(self, blocks_dictionary):
        init = blocks_scene(
            blocks_dictionary,
            {"block_a": "table", "block_b": "block_a", "block_c": "block_b"},
        )
        goal = ExactGraph(
            blocks_scene(
                blocks_dictionary,
                {"block_c": "table", "block_b": "block_c", "block_a": "block_b"},
            )
        )
        with pytest.raises(BudgetExhausted):
            search_plan(init, goal, SearchConfig(node_budget=1))

    def test_deterministic(self, seed=7):
        rng = random.Random(seed)
        d = random_dictionary(rng, n_movables=5, n_fixtures=3)
        init = random_graph(rng, d)
        goal = ExactGraph(scramble(rng, init, 5))
        assert search_plan(init, goal) == search_plan(init, goal)

    @pytest.mark.parametrize("seed", range(8))
    def test_pruned_destination_policy_still_solves(self, seed):
        rng = random.Random(seed)
        d = random_dictionary(rng, n_movables=rng.randint(3, 6), n_fixtures=3)
        init = random_graph(rng, d, open_fraction=0)
        goal = ExactGraph(scramble(rng, init, rng.randint(1, 6)))
        cfg = SearchConfig(
            allowed_destinations=DestinationPolicy.FIXTURES_AND_GOAL_SUPPORTERS
        )
        plan = search_plan(init, goal, cfg)
        assert plan is not None and verify_plan(init, goal, plan)

    def test_any_valid_mode_returns_a_plan(self, seed=3):
        rng = random.Random(seed)
        d = random_dictionary(rng, n_movables=5, n_fixtures=3)
        init = random_graph(rng, d)
        goal = ExactGraph(scramble(rng, init, 6))
        cfg = SearchConfig(optimality=Optimality.ANY_VALID)
        plan = search_plan(init, goal, cfg)
        assert plan is not None and verify_plan(init, goal, plan)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SearchConfig(node_budget=0)
        with pytest.raises(ValueError):
            SearchConfig(max_children_per_node=0)


class TestVerifyPlan:
    def test_empty_plan_on_satisfied_goal(self, kitchen_scene):
        assert verify_plan(kitchen_scene, ExactGraph(kitchen_scene), [])

    def test_violating_plan_is_false(self, stacked_scene, table_dictionary):
        goal = ExactGraph(stacked_scene)
        assert not verify_plan(stacked_scene, goal, [Move("plate", "table", "shelf")])

    def test_plan_missing_goal_is_false(self, stacked_scene):
        other = ExactGraph(
            SceneGraph(
                stacked_scene.nodes,
                [edge("cup", "on", "table"), edge("plate", "on", "shelf")],
            )
        )
        assert not verify_plan(stacked_scene, other, [])


class TestScriptedBackend:
    def test_replays_in_order_then_exhausts(self, kitchen_scene):
        turns = [
            PlannerTurn((Move("pan", "counter", "stovetop"),)),
            PlannerTurn((), stop=True),
        ]
        backend = scripted_backend(turns)
        ctx = ctx_for(kitchen_scene, ExactGraph(kitchen_scene))
        assert backend.propose(ctx) == turns[0]
        assert backend.propose(ctx) == turns[1]
        with pytest.raises(ScriptExhausted):
            backend.propose(ctx)

    def test_from_transcript_text(self, kitchen_scene):
        text = (
            "<begin_action_sequence>\nmove(pan, counter, stovetop)\n<end_action_sequence>\n"
            "<begin_action_sequence>\n<end_action_sequence>\n<PLAN_COMPLETED>\n"
        )
        backend = scripted_backend_from_text(text)
        ctx = ctx_for(kitchen_scene, ExactGraph(kitchen_scene))
        first = backend.propose(ctx)
        assert first.actions == (Move("pan", "counter", "stovetop"),)
        assert not first.stop
        assert backend.propose(ctx).stop

    def test_truncates_to_k(self, kitchen_scene):
        turn = PlannerTurn(tuple(Open("fridge") for _ in range(5)))
        backend = scripted_backend([turn])
        got = backend.propose(ctx_for(kitchen_scene, ExactGraph(kitchen_scene), k=2))
        assert len(got.actions) == 2


class TestSearchBackend:
    def test_stops_immediately_at_goal(self, kitchen_scene):
        backend = SearchBackend()
        turn = backend.propose(ctx_for(kitchen_scene, ExactGraph(kitchen_scene)))
        assert turn == PlannerTurn((), stop=True)

    def test_serves_plan_in_k_chunks(self, blocks_dictionary):
        # reversing a four-block tower needs four moves
        init = blocks_scene(
            blocks_dictionary,
            {"block_a": "table", "block_b": "block_a", "block_c": "block_b", "block_d": "block_c"},
        )
        goal = ExactGraph(
            blocks_scene(
                blocks_dictionary,
                {"block_d": "table", "block_c": "block_d", "block_b": "block_c", "block_a": "block_b"},
            )
        )
        full = search_plan(init, goal)
        assert full is not None and len(full) >= 4
        backend = SearchBackend()
        current = init
        collected: list = []
        for _ in range(10):
            turn = backend.propose(ctx_for(current, goal, k=3, initial=init))
            assert len(turn.actions) <= 3
            if turn.stop:
                break
            collected.extend(turn.actions)
            for action in turn.actions:
                current = apply_action(current, action)
        assert collected == full

    def test_unreachable_goal_raises(self, blocks_dictionary, kitchen_scene):
        init = blocks_scene(blocks_dictionary, {"block_a": "table"})
        backend = SearchBackend()
        with pytest.raises(PlanningFailed):
            backend.propose(ctx_for(init, ExactGraph(kitchen_scene)))


class TestFaultInjectingBackend:
    def test_fails_then_recovers(self, kitchen_scene):
        goal = ExactGraph(apply_action(kitchen_scene, Move("pan", "counter", "stovetop")))
        backend = FaultInjectingBackend(SearchBackend(), failures=2)
        ctx = ctx_for(kitchen_scene, goal)
        for _ in range(2):
            turn = backend.propose(ctx)
            assert check_action(kitchen_scene, turn.actions[0]) is not None
        good = backend.propose(ctx)
        assert all(check_action(kitchen_scene, a) is None for a in good.actions[:1])
