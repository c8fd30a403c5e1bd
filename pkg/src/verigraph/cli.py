"""Command-line client for the planning service.

Every subcommand is a thin HTTP client: it reads files, posts a request to
the service, prints the response, and maps the result to an exit code
(0 success, 1 task failure, 2 usage or parse error). By default an
in-process service instance handles the calls; `--server` points the same
commands at a remote deployment, and `serve` starts one.

Configuration precedence is flags, then VERIGRAPH_* environment variables,
then the JSON config file named by --config or VERIGRAPH_CONFIG.
"""

from __future__ import annotations

import argparse
import base64
import json
import os
import sys
from pathlib import Path
from typing import Any, Optional

import httpx

EXIT_OK = 0
EXIT_TASK_FAILED = 1
EXIT_USAGE = 2

CONFIG_ENV = "VERIGRAPH_CONFIG"
ENV_PREFIX = "VERIGRAPH_"


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_TASK_FAILED):
        super().__init__(message)
        self.code = code


def load_config(path: Optional[str]) -> dict:
    config_path = path or os.environ.get(CONFIG_ENV)
    if not config_path:
        return {}
    try:
        return json.loads(Path(config_path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(f"config file not found: {config_path}", EXIT_USAGE)
    except json.JSONDecodeError as exc:
        raise CliError(f"config file is not valid JSON: {exc}", EXIT_USAGE)


def setting(flag_value: Any, env_name: str, config: dict, config_key: str, default: Any) -> Any:
    """flags > environment > config file > built-in default"""
    if flag_value is not None:
        return flag_value
    env_value = os.environ.get(ENV_PREFIX + env_name)
    if env_value is not None:
        return env_value
    if config_key in config:
        return config[config_key]
    return default


class ServiceClient:
    """Thin JSON-over-HTTP client; in-process by default."""

    def __init__(self, server: Optional[str]):
        if server:
            self._client = httpx.Client(base_url=server, timeout=600.0)
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service.app import create_app

            self._client = TestClient(create_app())

    def post(self, path: str, payload: dict) -> dict:
        response = self._client.post(path, json=payload)
        body: dict
        try:
            body = response.json()
        except ValueError:
            raise CliError(f"service returned non-JSON ({response.status_code})")
        if response.status_code == 200:
            return body
        detail = body.get("detail", str(body))
        if response.status_code in (400, 422):
            raise CliError(f"bad input: {detail}", EXIT_USAGE)
        raise CliError(f"service error ({response.status_code}): {detail}")


def read_file(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_USAGE)


def dictionary_payload(path: Optional[str]) -> Optional[dict]:
    if path is None:
        return None
    try:
        return json.loads(read_file(path))
    except json.JSONDecodeError as exc:
        raise CliError(f"dictionary file is not valid JSON: {exc}", EXIT_USAGE)


def provider_payload(args: argparse.Namespace, config: dict) -> dict:
    return {
        "base_url": setting(args.base_url, "BASE_URL", config, "base_url", "https://api.openai.com/v1"),
        "model_name": setting(args.model, "MODEL", config, "model", "gpt-4o"),
        "api_key_env_var_name": setting(
            args.api_key_env, "API_KEY_ENV", config, "api_key_env", "OPENAI_API_KEY"
        ),
        "timeout": float(setting(None, "TIMEOUT", config, "timeout", 60.0)),
        "max_retries": int(setting(None, "MAX_RETRIES", config, "max_retries", 3)),
        "temperature": float(setting(None, "TEMPERATURE", config, "temperature", 0.0)),
    }


def params_payload(args: argparse.Namespace, config: dict) -> dict:
    return {
        "k": int(setting(args.k, "K", config, "k", 3)),
        "t": int(setting(args.tau, "TAU", config, "t", 5)),
        "max_iterations": int(
            setting(args.max_iterations, "MAX_ITERATIONS", config, "max_iterations", 25)
        ),
        "label_mode": "strict" if args.strict_labels else "ignore_label",
    }


def backend_payload(args: argparse.Namespace, config: dict) -> dict:
    spec: dict = {"kind": args.backend, "fail_first": getattr(args, "fail_first", 0)}
    spec["search"] = {
        "max_children_per_node": args.max_children,
        "allowed_destinations": args.destinations,
        "node_budget": args.node_budget,
        "optimality": "any_valid" if args.any_valid else "shortest",
    }
    if args.backend == "scripted":
        if not args.script:
            raise CliError("--script is required with --backend scripted", EXIT_USAGE)
        spec["script"] = read_file(args.script)
    if args.backend == "llm":
        spec["provider"] = provider_payload(args, config)
        spec["live"] = args.live
        if not args.live:
            if not args.cassette:
                raise CliError(
                    "--cassette is required for offline llm runs (or pass --live)",
                    EXIT_USAGE,
                )
            spec["cassette"] = json.loads(read_file(args.cassette))
    return spec


def add_backend_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--backend", choices=["search", "scripted", "llm"], default="search"
    )
    parser.add_argument("--script", help="transcript file for the scripted backend")
    parser.add_argument("--cassette", help="recorded provider responses for offline llm runs")
    parser.add_argument(
        "--live", action="store_true", help="allow real provider calls (paid; off by default)"
    )
    parser.add_argument("--fail-first", type=int, default=0, metavar="N",
                        help="make the backend fail its first N turns (for threshold studies)")
    parser.add_argument("--node-budget", type=int, default=200_000)
    parser.add_argument("--max-children", type=int, default=None,
                        help="stacking capacity of movable supports during search")
    parser.add_argument(
        "--destinations",
        choices=["any_node", "fixtures_and_goal_supporters"],
        default="any_node",
    )
    parser.add_argument("--any-valid", action="store_true",
                        help="accept the first plan found instead of a shortest one")
    parser.add_argument("--base-url", dest="base_url")
    parser.add_argument("--model", dest="model")
    parser.add_argument("--api-key-env", dest="api_key_env")


def add_params_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--k", type=int, default=None, help="actions per iteration")
    parser.add_argument("--tau", type=int, default=None, help="error threshold")
    parser.add_argument("--max-iterations", type=int, default=None)
    parser.add_argument("--strict-labels", action="store_true")


def add_genspec_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--cases", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--kind", choices=["exact", "single_stack"], default="exact")
    parser.add_argument("--min-movables", type=int, default=3)
    parser.add_argument("--max-movables", type=int, default=7)
    parser.add_argument("--fixtures", default="table,shelf")
    parser.add_argument("--openable-fixtures", default="")
    parser.add_argument("--openable-fraction", type=float, default=0.0)
    parser.add_argument("--max-depth", type=int, default=3)
    parser.add_argument("--scramble-min", type=int, default=2)
    parser.add_argument("--scramble-max", type=int, default=6)


def genspec_payload(args: argparse.Namespace) -> dict:
    return {
        "n_cases": args.cases,
        "seed": args.seed,
        "goal_kind": args.kind,
        "n_movables_min": args.min_movables,
        "n_movables_max": args.max_movables,
        "fixtures": [f for f in args.fixtures.split(",") if f],
        "openable_fixtures": [f for f in args.openable_fixtures.split(",") if f],
        "openable_fraction": args.openable_fraction,
        "max_stack_depth": args.max_depth,
        "scramble_min": args.scramble_min,
        "scramble_max": args.scramble_max,
    }


def corpus_payload(args: argparse.Namespace, client: ServiceClient) -> dict:
    if args.corpus:
        try:
            return json.loads(read_file(args.corpus))
        except json.JSONDecodeError as exc:
            raise CliError(f"corpus file is not valid JSON: {exc}", EXIT_USAGE)
    if getattr(args, "generate", False):
        return client.post("/corpus/generate", genspec_payload(args))["corpus"]
    raise CliError("pass --corpus FILE or --generate", EXIT_USAGE)


# -- commands -----------------------------------------------------------------


def cmd_parse_graph(args, client, config) -> int:
    body = client.post(
        "/graph/parse",
        {"text": read_file(args.graph), "dictionary": dictionary_payload(args.dictionary)},
    )
    print(body["graph"])
    if body["violations"]:
        for violation in body["violations"]:
            print(f"violation: {violation}", file=sys.stderr)
        return EXIT_TASK_FAILED
    return EXIT_OK


def cmd_diff(args, client, config) -> int:
    body = client.post(
        "/graph/diff",
        {
            "current": read_file(args.current),
            "goal": read_file(args.goal),
            "dictionary": dictionary_payload(args.dictionary),
            "label_mode": "strict" if args.strict_labels else "ignore_label",
        },
    )
    if body["matches"]:
        print("MATCH")
        return EXIT_OK
    print("MISMATCH")
    labels = {
        "missing_nodes": "missing node",
        "extra_nodes": "extra node",
        "missing_edges": "missing edge",
        "extra_edges": "extra edge",
        "open_state_mismatches": "open-state mismatch",
    }
    for field, label in labels.items():
        for item in body[field]:
            print(f"{label}: {item}")
    return EXIT_TASK_FAILED


def cmd_simulate(args, client, config) -> int:
    body = client.post(
        "/simulate",
        {
            "graph": read_file(args.graph),
            "actions": read_file(args.actions),
            "dictionary": dictionary_payload(args.dictionary),
            "require_open_containers": args.require_open_containers,
        },
    )
    print(body["final_graph"])
    print(f"executed: {len(body['executed'])}", file=sys.stderr)
    if not body["ok"]:
        print(
            f"failed at: {body['failed_at_step']} ({body['failure_reason']})",
            file=sys.stderr,
        )
        return EXIT_TASK_FAILED
    return EXIT_OK


def cmd_plan(args, client, config) -> int:
    goal = {"kind": "single_stack"} if args.single_stack else {
        "kind": "exact",
        "graph": read_file(args.goal),
    }
    body = client.post(
        "/plan",
        {
            "initial": read_file(args.init),
            "goal": goal,
            "dictionary": dictionary_payload(args.dictionary),
            "backend": backend_payload(args, config),
            "params": params_payload(args, config),
            "require_open_containers": args.require_open_containers,
        },
    )
    print(body["actions_block"])
    print(f"outcome: {body['outcome']} (errors: {body['error_count']})", file=sys.stderr)
    if args.transcript:
        print(body["transcript"], file=sys.stderr)
    return EXIT_OK if body["success"] else EXIT_TASK_FAILED


def cmd_sgg_gen(args, client, config) -> int:
    payload: dict = {
        "dictionary": dictionary_payload(args.dictionary),
        "provider": provider_payload(args, config),
        "live": args.live,
    }
    if args.image:
        payload["image_b64"] = base64.b64encode(Path(args.image).read_bytes()).decode()
        payload["media_type"] = args.media_type
    if args.instruction:
        payload["instruction"] = args.instruction
        if not args.initial:
            raise CliError("--instruction needs --initial GRAPH_FILE", EXIT_USAGE)
        payload["initial"] = read_file(args.initial)
    if not args.live:
        if not args.cassette:
            raise CliError("--cassette is required without --live", EXIT_USAGE)
        payload["cassette"] = json.loads(read_file(args.cassette))
    body = client.post("/sgg/generate", payload)
    print(body["graph"])
    return EXIT_OK


def cmd_gen_corpus(args, client, config) -> int:
    body = client.post("/corpus/generate", genspec_payload(args))
    Path(args.out).write_text(
        json.dumps(body["corpus"], indent=2) + "\n", encoding="utf-8"
    )
    print(f"wrote {body['n_cases']} cases to {args.out}")
    return EXIT_OK


def cmd_bench(args, client, config) -> int:
    body = client.post(
        "/bench",
        {
            "corpus": corpus_payload(args, client),
            "backend": backend_payload(args, config),
            "params": params_payload(args, config),
            "jobs": args.jobs,
        },
    )
    print(body["table"])
    if args.out:
        Path(args.out).write_text(
            json.dumps(body["report"], indent=2) + "\n", encoding="utf-8"
        )
        print(f"report written to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_ablate(args, client, config) -> int:
    def int_list(text: str) -> list[int]:
        try:
            return [int(x) for x in text.split(",") if x]
        except ValueError:
            raise CliError("tau/k lists must be comma-separated integers", EXIT_USAGE)

    body = client.post(
        "/ablate",
        {
            "corpus": corpus_payload(args, client),
            "backend": backend_payload(args, config),
            "params": params_payload(args, config),
            "taus": int_list(args.taus),
            "ks": int_list(args.ks),
            "jobs": args.jobs,
        },
    )
    print(body["table"])
    if args.out:
        Path(args.out).write_text(json.dumps(body["cells"], indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_serve(args, client, config) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="verigraph",
        description="Scene-graph plan verification: parse, diff, simulate, plan, benchmark.",
    )
    parser.add_argument("--server", default=os.environ.get(ENV_PREFIX + "SERVER"),
                        help="URL of a running service; default runs in-process")
    parser.add_argument("--config", default=None, help=f"JSON config file (or ${CONFIG_ENV})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse-graph", help="parse and validate a graph block file")
    p.add_argument("--graph", required=True)
    p.add_argument("--dictionary")
    p.set_defaults(func=cmd_parse_graph)

    p = sub.add_parser("diff", help="compare two graph files")
    p.add_argument("--current", required=True)
    p.add_argument("--goal", required=True)
    p.add_argument("--dictionary")
    p.add_argument("--strict-labels", action="store_true")
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("simulate", help="execute an action file against a graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--actions", required=True)
    p.add_argument("--dictionary")
    p.add_argument("--require-open-containers", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plan", help="run an iterative planning session")
    p.add_argument("--init", required=True)
    goal_group = p.add_mutually_exclusive_group(required=True)
    goal_group.add_argument("--goal")
    goal_group.add_argument("--single-stack", action="store_true")
    p.add_argument("--dictionary")
    p.add_argument("--require-open-containers", action="store_true")
    p.add_argument("--transcript", action="store_true", help="dump the session log to stderr")
    add_params_flags(p)
    add_backend_flags(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("sgg-gen", help="generate a scene graph from an image or instruction")
    p.add_argument("--dictionary", required=True)
    p.add_argument("--image")
    p.add_argument("--media-type", default="image/png")
    p.add_argument("--instruction")
    p.add_argument("--initial", help="initial graph file (with --instruction)")
    p.add_argument("--cassette")
    p.add_argument("--live", action="store_true")
    p.add_argument("--base-url", dest="base_url")
    p.add_argument("--model", dest="model")
    p.add_argument("--api-key-env", dest="api_key_env")
    p.set_defaults(func=cmd_sgg_gen)

    p = sub.add_parser("gen-corpus", help="write a seeded random benchmark corpus")
    p.add_argument("--out", required=True)
    add_genspec_flags(p)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("bench", help="run the benchmark over a corpus")
    p.add_argument("--corpus")
    p.add_argument("--generate", action="store_true", help="generate the corpus on the fly")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="write the machine-readable report here")
    add_genspec_flags(p)
    add_params_flags(p)
    add_backend_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="sweep error thresholds and actions per turn")
    p.add_argument("--corpus")
    p.add_argument("--generate", action="store_true")
    p.add_argument("--taus", default="2,3,5,10")
    p.add_argument("--ks", default="2,3,5,10")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    add_genspec_flags(p)
    add_params_flags(p)
    add_backend_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8099)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        client = None if args.command == "serve" else ServiceClient(args.server)
        return args.func(args, client, config)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except httpx.HTTPError as exc:
        print(f"error: cannot reach service: {exc}", file=sys.stderr)
        return EXIT_TASK_FAILED
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # exit codes, not tracebacks
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_TASK_FAILED


if __name__ == "__main__":
    sys.exit(main())
