"""Prompt construction, provider transport, and the model-backed planner.

Prompts are stored verbatim as package data and rendered by placeholder
substitution; golden tests pin their bytes. All network traffic goes through
a small transport interface so the whole suite runs offline against cassette
fixtures (request hash -> recorded response text). A live HTTP transport
speaks the common chat-completions JSON protocol.

A planner session keeps the full conversation history and appends one
serialized feedback object per turn; history is resent each call, trading
tokens for not having to restate the scene.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import time
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Optional, Protocol, Sequence, Union

import httpx

from .planner import PlannerContext, PlannerTurn
from .scene_graph import (
    ExactGraph,
    GlobalDictionary,
    GoalSpec,
    LabelMode,
    Relation,
    SceneGraph,
)
from .textio import (
    SINGLE_STACK_GOAL_NOTE,
    extract_action_sequence,
    parse_scene_graph,
    serialize_feedback,
    serialize_scene_graph,
)


class TemplateId(Enum):
    SGG_FROM_IMAGE = "sgg_image"
    SGG_FROM_INSTRUCTION = "sgg_instruction"
    ITERATIVE_PLANNER = "iterative_planner"


_TEMPLATE_PLACEHOLDERS = {
    TemplateId.SGG_FROM_IMAGE: ("<GLOBAL_OBJECTS_HERE>",),
    TemplateId.SGG_FROM_INSTRUCTION: ("<INITIAL_SG_HERE>", "<INSTRUCTION_HERE>"),
    TemplateId.ITERATIVE_PLANNER: ("<NUM_STEPS_HERE>", "<GRAPHS_HERE>"),
}

ALL_PLACEHOLDERS = (
    "<GLOBAL_OBJECTS_HERE>",
    "<INITIAL_SG_HERE>",
    "<INSTRUCTION_HERE>",
    "<NUM_STEPS_HERE>",
    "<GRAPHS_HERE>",
)


@dataclass(frozen=True)
class PromptTemplate:
    template_id: TemplateId
    body: str

    @property
    def placeholders(self) -> tuple[str, ...]:
        return _TEMPLATE_PLACEHOLDERS[self.template_id]


class MissingBinding(KeyError):
    def __init__(self, placeholder: str):
        self.placeholder = placeholder
        super().__init__(placeholder)

    def __str__(self) -> str:
        return f"no binding for placeholder {self.placeholder}"


def load_template(template_id: TemplateId) -> PromptTemplate:
    body = (
        resources.files("verigraph")
        .joinpath("prompts", f"{template_id.value}.txt")
        .read_text(encoding="utf-8")
    )
    return PromptTemplate(template_id, body)


def render_prompt(template: PromptTemplate, bindings: dict[str, str]) -> str:
    """Substitute every placeholder of the template; nothing else changes."""
    text = template.body
    for placeholder in template.placeholders:
        if placeholder not in bindings:
            raise MissingBinding(placeholder)
        text = text.replace(placeholder, bindings[placeholder])
    for placeholder in ALL_PLACEHOLDERS:
        if placeholder in text:
            raise MissingBinding(placeholder)
    return text


def dictionary_binding(d: GlobalDictionary) -> str:
    return ", ".join(sorted(d.names))


def graphs_binding(initial: SceneGraph, goal: GoalSpec) -> str:
    """The scene-graphs section of the planner prompt: initial plus goal."""
    parts = ["Initial Scene Graph:", serialize_scene_graph(initial), ""]
    if isinstance(goal, ExactGraph):
        parts += ["Goal Scene Graph:", serialize_scene_graph(goal.graph)]
    else:
        parts += ["Goal:", SINGLE_STACK_GOAL_NOTE]
    return "\n".join(parts)


# -- provider transport -------------------------------------------------------


class AuthError(RuntimeError):
    pass


class ProviderTimeout(RuntimeError):
    pass


class RateLimited(RuntimeError):
    pass


class MalformedProviderResponse(RuntimeError):
    pass


class CassetteMiss(KeyError):
    def __init__(self, request_hash: str):
        self.request_hash = request_hash
        super().__init__(request_hash)

    def __str__(self) -> str:
        return f"no recorded response for request {self.request_hash}"


@dataclass(frozen=True)
class ProviderConfig:
    base_url: str = "https://api.openai.com/v1"
    model_name: str = "gpt-4o"
    api_key_env_var_name: str = "OPENAI_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


@dataclass(frozen=True)
class ImagePayload:
    data: bytes
    media_type: str = "image/png"

    def as_data_url(self) -> str:
        return f"data:{self.media_type};base64,{base64.b64encode(self.data).decode()}"


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str
    image: Optional[ImagePayload] = None

    def wire_form(self) -> dict:
        if self.image is None:
            return {"role": self.role, "content": self.content}
        return {
            "role": self.role,
            "content": [
                {"type": "text", "text": self.content},
                {"type": "image_url", "image_url": {"url": self.image.as_data_url()}},
            ],
        }


def request_payload(cfg: ProviderConfig, messages: Sequence[ChatMessage]) -> dict:
    return {
        "model": cfg.model_name,
        "temperature": cfg.temperature,
        "messages": [m.wire_form() for m in messages],
    }


def request_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class Transport(Protocol):
    def send(self, payload: dict) -> str: ...


class HttpTransport:
    """Live chat-completions endpoint; resolves the API key from the
    environment before any network traffic."""

    def __init__(self, cfg: ProviderConfig):
        key = os.environ.get(cfg.api_key_env_var_name)
        if not key:
            raise AuthError(f"environment variable {cfg.api_key_env_var_name} is not set")
        self._cfg = cfg
        self._headers = {"Authorization": f"Bearer {key}"}

    def send(self, payload: dict) -> str:
        try:
            response = httpx.post(
                self._cfg.base_url.rstrip("/") + "/chat/completions",
                json=payload,
                headers=self._headers,
                timeout=self._cfg.timeout,
            )
        except httpx.TimeoutException as exc:
            raise ProviderTimeout(str(exc)) from exc
        except httpx.TransportError as exc:
            raise ProviderTimeout(f"transport failure: {exc}") from exc
        if response.status_code in (401, 403):
            raise AuthError(f"provider rejected credentials ({response.status_code})")
        if response.status_code == 429:
            raise RateLimited(response.text[:200])
        if response.status_code >= 500:
            raise ProviderTimeout(f"server error {response.status_code}")
        if response.status_code != 200:
            raise MalformedProviderResponse(
                f"unexpected status {response.status_code}: {response.text[:200]}"
            )
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise MalformedProviderResponse(f"cannot read completion: {exc}") from exc


class CassetteTransport:
    """Offline replay from a request-hash -> response-text mapping."""

    def __init__(self, cassette: dict[str, str]):
        self._cassette = dict(cassette)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "CassetteTransport":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def send(self, payload: dict) -> str:
        key = request_hash(payload)
        if key not in self._cassette:
            raise CassetteMiss(key)
        return self._cassette[key]


class RecordingTransport:
    """Wraps a transport and records request hash -> response for later replay."""

    def __init__(self, inner: Transport):
        self._inner = inner
        self.cassette: dict[str, str] = {}

    def send(self, payload: dict) -> str:
        response = self._inner.send(payload)
        self.cassette[request_hash(payload)] = response
        return self.cassette[request_hash(payload)]

    def dump(self, path: Union[str, Path]) -> None:
        Path(path).write_text(
            json.dumps(self.cassette, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


_RETRY_BASE_DELAY = 0.5


def chat(
    cfg: ProviderConfig,
    messages: Sequence[ChatMessage],
    transport: Optional[Transport] = None,
) -> str:
    """One completion round-trip with exponential backoff on transient errors."""
    if transport is None:
        transport = HttpTransport(cfg)
    payload = request_payload(cfg, messages)
    attempt = 0
    while True:
        try:
            return transport.send(payload)
        except (ProviderTimeout, RateLimited):
            attempt += 1
            if attempt > cfg.max_retries:
                raise
            time.sleep(_RETRY_BASE_DELAY * 2 ** (attempt - 1))


# -- scene graph generation ----------------------------------------------------

FINAL_GRAPH_HEADING = "FINAL SCENE GRAPH"
SCRATCH_BEGIN = "<begin_scratch_pad>"
SCRATCH_END = "<end_scratch_pad>"


def _strip_scratch_pads(text: str) -> str:
    out = []
    pos = 0
    while True:
        start = text.find(SCRATCH_BEGIN, pos)
        if start == -1:
            out.append(text[pos:])
            return "".join(out)
        out.append(text[pos:start])
        end = text.find(SCRATCH_END, start)
        if end == -1:
            return "".join(out)
        pos = end + len(SCRATCH_END)


def extract_final_graph(response: str, dictionary: GlobalDictionary) -> SceneGraph:
    """Parse the graph block under the last FINAL SCENE GRAPH heading.

    Scratch-pad sections are discarded first, so a draft graph in the
    reasoning never shadows the answer.
    """
    from .textio import MissingBlock

    cleaned = _strip_scratch_pads(response)
    heading = cleaned.rfind(FINAL_GRAPH_HEADING)
    if heading == -1:
        raise MissingBlock(f"no {FINAL_GRAPH_HEADING} section in response")
    return parse_scene_graph(cleaned[heading:], dictionary)


@dataclass(frozen=True)
class SggRequest:
    """Input to scene-graph generation: an image or an instruction over an
    initial graph, plus the closed vocabulary."""

    dictionary: GlobalDictionary
    image: Optional[ImagePayload] = None
    instruction: Optional[str] = None
    initial: Optional[SceneGraph] = None
    relations: frozenset[Relation] = frozenset((Relation.IN, Relation.ON))

    def __post_init__(self) -> None:
        if (self.image is None) == (self.instruction is None):
            raise ValueError("provide exactly one of image or instruction")
        if self.instruction is not None:
            if self.initial is None:
                raise ValueError("instruction input needs the initial scene graph")
            violations = self.initial.validate()
            if violations:
                raise ValueError(f"initial scene graph is invalid: {violations[0]}")
        if not self.relations <= {Relation.IN, Relation.ON}:
            raise ValueError("only in/on relations are supported")


def generate_scene_graph(
    req: SggRequest,
    cfg: ProviderConfig,
    transport: Optional[Transport] = None,
) -> SceneGraph:
    """Render the generation prompt, query the provider, parse the answer."""
    if req.image is not None:
        template = load_template(TemplateId.SGG_FROM_IMAGE)
        prompt = render_prompt(
            template, {"<GLOBAL_OBJECTS_HERE>": dictionary_binding(req.dictionary)}
        )
        messages = [ChatMessage("user", prompt, image=req.image)]
    else:
        template = load_template(TemplateId.SGG_FROM_INSTRUCTION)
        assert req.initial is not None
        prompt = render_prompt(
            template,
            {
                "<INITIAL_SG_HERE>": serialize_scene_graph(req.initial),
                "<INSTRUCTION_HERE>": req.instruction or "",
            },
        )
        messages = [ChatMessage("user", prompt)]
    response = chat(cfg, messages, transport)
    return extract_final_graph(response, req.dictionary)


# -- model-backed planner session ------------------------------------------------


class LlmBackend:
    """Planner backend holding one conversation with the provider.

    The first turn sends the rendered planning prompt with the scene graphs
    substituted in; every later turn appends the previous feedback as a user
    message. Responses are parsed for the action block and stop token. A
    session is single-use and strictly serial.
    """

    def __init__(
        self,
        cfg: ProviderConfig,
        k: int,
        transport: Optional[Transport] = None,
        label_mode: LabelMode = LabelMode.IGNORE_LABEL,
    ):
        if k < 1:
            raise ValueError("k must be at least 1")
        self._cfg = cfg
        self._k = k
        self._transport = transport
        self._label_mode = label_mode
        self._messages: list[ChatMessage] = []

    def propose(self, ctx: PlannerContext) -> PlannerTurn:
        if not self._messages:
            template = load_template(TemplateId.ITERATIVE_PLANNER)
            prompt = render_prompt(
                template,
                {
                    "<NUM_STEPS_HERE>": str(self._k),
                    "<GRAPHS_HERE>": graphs_binding(ctx.initial, ctx.goal),
                },
            )
            self._messages.append(ChatMessage("user", prompt))
        elif ctx.last_feedback is not None:
            self._messages.append(ChatMessage("user", serialize_feedback(ctx.last_feedback)))
        response = chat(self._cfg, self._messages, self._transport)
        self._messages.append(ChatMessage("assistant", response))
        actions, stop = extract_action_sequence(response)
        return PlannerTurn(tuple(actions[: self._k]), stop=stop, raw_text=response)


def llm_backend(
    cfg: ProviderConfig,
    k: int,
    transport: Optional[Transport] = None,
    label_mode: LabelMode = LabelMode.IGNORE_LABEL,
) -> LlmBackend:
    return LlmBackend(cfg, k, transport, label_mode)
