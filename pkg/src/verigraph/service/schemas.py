"""Request/response models for the planning service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class DictionaryEntryModel(BaseModel):
    kind: Literal["fixture", "movable"]
    openable: bool = False


DictionaryModel = dict[str, DictionaryEntryModel]


class GoalModel(BaseModel):
    kind: Literal["exact", "single_stack"] = "exact"
    graph: Optional[str] = None  # graph block text, required when kind == "exact"


class LoopParamsModel(BaseModel):
    k: int = 3
    t: int = 5
    max_iterations: int = 25
    label_mode: Literal["strict", "ignore_label"] = "ignore_label"


class SearchConfigModel(BaseModel):
    max_children_per_node: Optional[int] = None
    allowed_destinations: Literal["any_node", "fixtures_and_goal_supporters"] = "any_node"
    node_budget: int = 200_000
    optimality: Literal["shortest", "any_valid"] = "shortest"


class ProviderConfigModel(BaseModel):
    base_url: str = "https://api.openai.com/v1"
    model_name: str = "gpt-4o"
    api_key_env_var_name: str = "OPENAI_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0


class BackendSpecModel(BaseModel):
    kind: Literal["search", "scripted", "llm"] = "search"
    search: SearchConfigModel = Field(default_factory=SearchConfigModel)
    script: Optional[str] = None  # transcript text, one action block per turn
    provider: ProviderConfigModel = Field(default_factory=ProviderConfigModel)
    live: bool = False  # without this, llm backends replay the cassette only
    cassette: Optional[dict[str, str]] = None
    fail_first: int = 0  # wrap with a fault injector failing this many turns


class ParseGraphRequest(BaseModel):
    text: str
    dictionary: Optional[DictionaryModel] = None


class ParseGraphResponse(BaseModel):
    graph: str  # canonical serialization
    nodes: list[str]
    relations: list[str]
    open: list[str]
    violations: list[str]


class DiffRequest(BaseModel):
    current: str
    goal: str
    dictionary: Optional[DictionaryModel] = None
    label_mode: Literal["strict", "ignore_label"] = "ignore_label"


class DiffResponse(BaseModel):
    matches: bool
    missing_nodes: list[str]
    extra_nodes: list[str]
    missing_edges: list[str]
    extra_edges: list[str]
    open_state_mismatches: list[str]


class SimulateRequest(BaseModel):
    graph: str
    actions: str  # action block or bare action lines
    dictionary: Optional[DictionaryModel] = None
    require_open_containers: bool = False


class SimulateResponse(BaseModel):
    ok: bool
    final_graph: str
    executed: list[str]
    failed_at_step: Optional[str] = None
    failure_reason: Optional[str] = None


class PlanRequest(BaseModel):
    initial: str
    goal: GoalModel
    dictionary: Optional[DictionaryModel] = None
    backend: BackendSpecModel = Field(default_factory=BackendSpecModel)
    params: LoopParamsModel = Field(default_factory=LoopParamsModel)
    require_open_containers: bool = False


class PlanResponse(BaseModel):
    outcome: str
    success: bool
    actions_block: str  # wire format, consumable by /simulate
    executed: list[str]
    error_count: int
    turns: int
    final_graph: str
    transcript: str
    error: Optional[str] = None


class SggGenRequest(BaseModel):
    dictionary: DictionaryModel
    instruction: Optional[str] = None
    initial: Optional[str] = None  # graph block, required with instruction
    image_b64: Optional[str] = None
    media_type: str = "image/png"
    provider: ProviderConfigModel = Field(default_factory=ProviderConfigModel)
    live: bool = False
    cassette: Optional[dict[str, str]] = None


class SggGenResponse(BaseModel):
    graph: str


class GenCorpusRequest(BaseModel):
    n_cases: int = 20
    n_movables_min: int = 3
    n_movables_max: int = 7
    fixtures: list[str] = ["table", "shelf"]
    openable_fixtures: list[str] = []
    openable_fraction: float = 0.0
    max_stack_depth: int = 3
    scramble_min: int = 2
    scramble_max: int = 6
    goal_kind: Literal["exact", "single_stack"] = "exact"
    seed: int = 0


class GenCorpusResponse(BaseModel):
    corpus: dict
    n_cases: int


class BenchRequest(BaseModel):
    corpus: dict  # corpus document
    backend: BackendSpecModel = Field(default_factory=BackendSpecModel)
    params: LoopParamsModel = Field(default_factory=LoopParamsModel)
    jobs: int = 1


class BenchResponse(BaseModel):
    report: dict
    table: str
    success_rate: float


class AblateRequest(BaseModel):
    corpus: dict
    backend: BackendSpecModel = Field(default_factory=BackendSpecModel)
    params: LoopParamsModel = Field(default_factory=LoopParamsModel)
    taus: list[int]
    ks: list[int]
    jobs: int = 1


class AblateResponse(BaseModel):
    cells: dict[str, float]  # "tau,k" -> success rate
    table: str


class ErrorResponse(BaseModel):
    detail: str
    error_type: str
