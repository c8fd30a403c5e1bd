"""FastAPI service exposing the simulator, planners, and evaluation harness.

The service is stateless: graphs, scripts, corpora, and cassettes all travel
inside the request, so any number of clients can share one instance. Wire
errors (bad graph blocks, malformed actions, corpus schema problems) map to
HTTP 400 with the parser's message; provider problems map to 502.
"""

from __future__ import annotations

import base64
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..actions import execute_sequence
from ..evaluation import (
    GenSpec,
    ablation_sweep,
    generate_corpus,
    render_ablation_table,
    render_bench_table,
    report_to_mapping,
    run_benchmark,
)
from ..llm import (
    AuthError,
    CassetteMiss,
    CassetteTransport,
    HttpTransport,
    ImagePayload,
    MalformedProviderResponse,
    ProviderConfig,
    ProviderTimeout,
    RateLimited,
    SggRequest,
    Transport,
    generate_scene_graph,
    llm_backend,
)
from ..loop import LoopParams, format_transcript, run_iterative
from ..planner import (
    DestinationPolicy,
    FaultInjectingBackend,
    Optimality,
    SearchBackend,
    SearchConfig,
    ScriptedBackend,
    turns_from_transcript,
)
from ..scene_graph import (
    ExactGraph,
    GlobalDictionary,
    GoalSpec,
    LabelMode,
    SingleStack,
    diff,
)
from ..textio import (
    ACTIONS_BEGIN,
    ACTIONS_END,
    STOP_TOKEN,
    CorpusSchemaError,
    ParseError,
    corpus_from_document,
    extract_action_sequence,
    parse_action,
    parse_scene_graph,
    render_relation,
    serialize_action,
    serialize_scene_graph,
)
from . import schemas


def _dictionary(data: Optional[dict]) -> Optional[GlobalDictionary]:
    if data is None:
        return None
    return GlobalDictionary.from_mapping(
        {name: entry.model_dump() for name, entry in data.items()}
    )


def _label_mode(name: str) -> LabelMode:
    return LabelMode(name)


def _goal(model: schemas.GoalModel, dictionary: Optional[GlobalDictionary]) -> GoalSpec:
    if model.kind == "single_stack":
        return SingleStack()
    if not model.graph:
        raise ParseError("exact goal needs a graph block")
    return ExactGraph(parse_scene_graph(model.graph, dictionary))


def _loop_params(model: schemas.LoopParamsModel) -> LoopParams:
    return LoopParams(
        k=model.k,
        t=model.t,
        max_iterations=model.max_iterations,
        label_mode=_label_mode(model.label_mode),
    )


def _provider(model: schemas.ProviderConfigModel) -> ProviderConfig:
    return ProviderConfig(**model.model_dump())


def _search_config(model: schemas.SearchConfigModel) -> SearchConfig:
    return SearchConfig(
        max_children_per_node=model.max_children_per_node,
        allowed_destinations=DestinationPolicy(model.allowed_destinations),
        node_budget=model.node_budget,
        optimality=Optimality(model.optimality),
    )


def _transport(spec: schemas.BackendSpecModel, cfg: ProviderConfig) -> Transport:
    if spec.live:
        return HttpTransport(cfg)
    if spec.cassette is None:
        raise ParseError("offline llm backend needs a cassette; pass live=true to go out")
    return CassetteTransport(spec.cassette)


def _backend_factory(spec: schemas.BackendSpecModel, params: LoopParams):
    label_mode = params.label_mode
    if spec.kind == "search":
        cfg = _search_config(spec.search)

        def make(case=None):
            return SearchBackend(cfg, label_mode)

    elif spec.kind == "scripted":
        if spec.script is None:
            raise ParseError("scripted backend needs a script")
        turns = turns_from_transcript(spec.script)  # parse once, fail fast

        def make(case=None):
            return ScriptedBackend(turns)

    else:
        cfg = _provider(spec.provider)
        transport = _transport(spec, cfg)

        def make(case=None):
            return llm_backend(cfg, params.k, transport, label_mode)

    if spec.fail_first > 0:
        inner = make

        def make(case=None):
            return FaultInjectingBackend(inner(case), spec.fail_first)

    return make


def _actions_from_text(text: str):
    if ACTIONS_BEGIN in text:
        actions, _ = extract_action_sequence(text)
        return actions
    return [
        parse_action(line, line_no)
        for line_no, line in enumerate(text.split("\n"), start=1)
        if line.strip()
    ]


def actions_block(actions, stop: bool = True) -> str:
    lines = [ACTIONS_BEGIN, *[serialize_action(a) for a in actions], ACTIONS_END]
    if stop:
        lines.append(STOP_TOKEN)
    return "\n".join(lines)


def create_app() -> FastAPI:
    app = FastAPI(title="verigraph", version=__version__)

    @app.exception_handler(ParseError)
    @app.exception_handler(CorpusSchemaError)
    @app.exception_handler(ValueError)
    async def bad_request(request: Request, exc: Exception):
        return JSONResponse(
            status_code=400,
            content={"detail": str(exc), "error_type": type(exc).__name__},
        )

    @app.exception_handler(AuthError)
    @app.exception_handler(ProviderTimeout)
    @app.exception_handler(RateLimited)
    @app.exception_handler(MalformedProviderResponse)
    @app.exception_handler(CassetteMiss)
    async def provider_trouble(request: Request, exc: Exception):
        return JSONResponse(
            status_code=502,
            content={"detail": str(exc), "error_type": type(exc).__name__},
        )

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/graph/parse", response_model=schemas.ParseGraphResponse)
    def graph_parse(req: schemas.ParseGraphRequest) -> schemas.ParseGraphResponse:
        dictionary = _dictionary(req.dictionary)
        g = parse_scene_graph(req.text, dictionary)
        return schemas.ParseGraphResponse(
            graph=serialize_scene_graph(g),
            nodes=sorted(g.node_names),
            relations=[
                render_relation(e, LabelMode.STRICT)
                for e in sorted(g.edges, key=lambda e: (e.child, e.parent))
            ],
            open=sorted(g.open_names()),
            violations=[str(v) for v in g.validate(dictionary)],
        )

    @app.post("/graph/diff", response_model=schemas.DiffResponse)
    def graph_diff(req: schemas.DiffRequest) -> schemas.DiffResponse:
        dictionary = _dictionary(req.dictionary)
        current = parse_scene_graph(req.current, dictionary)
        goal = parse_scene_graph(req.goal, dictionary)
        report = diff(current, goal, _label_mode(req.label_mode))
        strict = LabelMode.STRICT
        return schemas.DiffResponse(
            matches=report.matches,
            missing_nodes=sorted(report.missing_nodes),
            extra_nodes=sorted(report.extra_nodes),
            missing_edges=sorted(render_relation(e, strict) for e in report.missing_edges),
            extra_edges=sorted(render_relation(e, strict) for e in report.extra_edges),
            open_state_mismatches=sorted(report.open_state_mismatches),
        )

    @app.post("/simulate", response_model=schemas.SimulateResponse)
    def simulate(req: schemas.SimulateRequest) -> schemas.SimulateResponse:
        dictionary = _dictionary(req.dictionary)
        g = parse_scene_graph(req.graph, dictionary)
        actions = _actions_from_text(req.actions)
        result = execute_sequence(g, actions, req.require_open_containers)
        return schemas.SimulateResponse(
            ok=result.ok,
            final_graph=serialize_scene_graph(result.final_graph),
            executed=[serialize_action(a) for a in result.executed],
            failed_at_step=serialize_action(result.failed_at_step)
            if result.failed_at_step
            else None,
            failure_reason=result.failure_reason.value if result.failure_reason else None,
        )

    @app.post("/plan", response_model=schemas.PlanResponse)
    def plan(req: schemas.PlanRequest) -> schemas.PlanResponse:
        dictionary = _dictionary(req.dictionary)
        initial = parse_scene_graph(req.initial, dictionary)
        goal = _goal(req.goal, dictionary)
        params = _loop_params(req.params)
        backend = _backend_factory(req.backend, params)(None)
        result = run_iterative(
            initial, goal, backend, params, req.require_open_containers
        )
        return schemas.PlanResponse(
            outcome=result.outcome.value,
            success=result.success,
            actions_block=actions_block(result.executed),
            executed=[serialize_action(a) for a in result.executed],
            error_count=result.error_count,
            turns=len(result.turns),
            final_graph=serialize_scene_graph(result.final_graph),
            transcript=format_transcript(result),
            error=result.error,
        )

    @app.post("/sgg/generate", response_model=schemas.SggGenResponse)
    def sgg_generate(req: schemas.SggGenRequest) -> schemas.SggGenResponse:
        dictionary = _dictionary(req.dictionary)
        assert dictionary is not None
        cfg = _provider(req.provider)
        backend_spec = schemas.BackendSpecModel(
            kind="llm", live=req.live, cassette=req.cassette
        )
        transport = _transport(backend_spec, cfg)
        image = None
        if req.image_b64 is not None:
            image = ImagePayload(base64.b64decode(req.image_b64), req.media_type)
        initial = parse_scene_graph(req.initial, dictionary) if req.initial else None
        sgg = SggRequest(
            dictionary=dictionary,
            instruction=req.instruction,
            initial=initial,
            image=image,
        )
        graph = generate_scene_graph(sgg, cfg, transport)
        return schemas.SggGenResponse(graph=serialize_scene_graph(graph))

    @app.post("/corpus/generate", response_model=schemas.GenCorpusResponse)
    def corpus_generate(req: schemas.GenCorpusRequest) -> schemas.GenCorpusResponse:
        from ..textio import corpus_to_document

        spec = GenSpec(
            n_cases=req.n_cases,
            n_movables_min=req.n_movables_min,
            n_movables_max=req.n_movables_max,
            fixtures=tuple(req.fixtures),
            openable_fixtures=tuple(req.openable_fixtures),
            openable_fraction=req.openable_fraction,
            max_stack_depth=req.max_stack_depth,
            scramble_min=req.scramble_min,
            scramble_max=req.scramble_max,
            goal_kind=req.goal_kind,
            seed=req.seed,
        )
        cases = generate_corpus(spec)
        return schemas.GenCorpusResponse(corpus=corpus_to_document(cases), n_cases=len(cases))

    @app.post("/bench", response_model=schemas.BenchResponse)
    def bench(req: schemas.BenchRequest) -> schemas.BenchResponse:
        corpus = corpus_from_document(req.corpus)
        params = _loop_params(req.params)
        factory = _backend_factory(req.backend, params)
        report = run_benchmark(corpus, factory, params, jobs=req.jobs)
        return schemas.BenchResponse(
            report=report_to_mapping(report),
            table=render_bench_table(report),
            success_rate=report.success_rate,
        )

    @app.post("/ablate", response_model=schemas.AblateResponse)
    def ablate(req: schemas.AblateRequest) -> schemas.AblateResponse:
        corpus = corpus_from_document(req.corpus)
        params = _loop_params(req.params)
        factory_for = lambda cell_params: _backend_factory(req.backend, cell_params)
        grid = ablation_sweep(corpus, factory_for, req.taus, req.ks, params, jobs=req.jobs)
        return schemas.AblateResponse(
            cells={f"{tau},{k}": rate for (tau, k), rate in grid.success_rates.items()},
            table=render_ablation_table(grid),
        )

    return app


app = create_app()
