"""Command-line front end.

The CLI is a thin client of the HTTP service: every subcommand builds a
request and posts it. By default the service app is mounted in-process, so
``decaf run ...`` works standalone; pass ``--server URL`` to drive a remote
instance instead (paths are then resolved on the server).

Exit codes: 0 success, 1 pipeline errors (failed tasks are recorded and
reported, not fatal mid-run), 2 usage or configuration errors.
"""

from __future__ import annotations

import argparse
import base64
import json
import logging
import os
import sys
from pathlib import Path

import httpx

log = logging.getLogger(__name__)

PIPELINE_PHASES = ("generate", "compile", "execute", "rerank")


class _InProcessTransport(httpx.BaseTransport):
    """Serve requests from the ASGI app inside this process, synchronously."""

    def __init__(self, app):
        self._app = app

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        import asyncio

        return asyncio.run(self._dispatch(request))

    async def _dispatch(self, request: httpx.Request) -> httpx.Response:
        scope = {
            "type": "http",
            "asgi": {"version": "3.0", "spec_version": "2.3"},
            "http_version": "1.1",
            "method": request.method,
            "scheme": request.url.scheme,
            "path": request.url.path,
            "raw_path": request.url.raw_path,
            "query_string": request.url.query,
            "headers": [(k.lower(), v) for k, v in request.headers.raw],
            "server": (request.url.host, request.url.port or 80),
            "client": ("127.0.0.1", 0),
            "root_path": "",
        }
        body = request.read()
        delivered = False

        async def receive():
            nonlocal delivered
            if delivered:
                return {"type": "http.disconnect"}
            delivered = True
            return {"type": "http.request", "body": body, "more_body": False}

        status = 500
        headers: list = []
        chunks: list[bytes] = []

        async def send(message):
            nonlocal status, headers
            if message["type"] == "http.response.start":
                status = message["status"]
                headers = message.get("headers", [])
            elif message["type"] == "http.response.body":
                chunks.append(message.get("body", b""))

        await self._app(scope, receive, send)
        return httpx.Response(
            status, headers=headers, content=b"".join(chunks), request=request
        )


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    from .service import app

    return httpx.Client(
        transport=_InProcessTransport(app), base_url="http://decaf.local", timeout=None
    )


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tasks", required=True, help="task file or directory of task files")
    p.add_argument("--run-id", default="", help="resume or name a run (default: derived)")
    p.add_argument("--run-root", default="runs", help="directory that holds run stores")
    p.add_argument("--n", type=int, default=32, help="candidate samples per task")
    p.add_argument("--temperature", type=float, default=0.8)
    p.add_argument("--max-tokens", type=int, default=4096)
    p.add_argument("--policies", default="logprob,bytedist",
                   help="comma-separated: logprob,bytedist,neural,two_stage,oracle")
    p.add_argument("--profile", default="gcc-O0", help="default compiler profile id")
    p.add_argument("--profiles", default=None, help="JSON/TOML file with extra profiles")
    p.add_argument("--jobs", type=int, default=4, help="concurrent compile/execute workers")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gen-endpoint", default=None, help="generator URL (or replay path)")
    p.add_argument("--scorer-endpoint", default=None, help="neural scorer URL")
    p.add_argument("--replay", default=None, help="replay candidate file (overrides endpoint)")
    p.add_argument("--replay-scores", default=None, help="replay scorer file")
    p.add_argument("--cpu-limit", type=int, default=10, help="per-test CPU seconds")
    p.add_argument("--mem-limit", type=int, default=512, help="per-test memory (MiB)")
    p.add_argument("--prefix-best", action="store_true",
                   help="also emit order-dependent prefix-best curves")


def _run_request(args: argparse.Namespace) -> dict:
    return {
        "tasks_path": args.tasks,
        "run_root": args.run_root,
        "run_id": args.run_id,
        "generator": {
            "endpoint": args.gen_endpoint or "",
            "n_samples": args.n,
            "temperature": args.temperature,
            "max_tokens": args.max_tokens,
            "seed": args.seed,
        },
        "profiles_path": args.profiles,
        "profile_id": args.profile,
        "policies": [p.strip() for p in args.policies.split(",") if p.strip()],
        "seed": args.seed,
        "jobs": args.jobs,
        "replay_candidates": args.replay,
        "replay_scores": args.replay_scores,
        "scorer_endpoint": args.scorer_endpoint,
        "cpu_seconds": args.cpu_limit,
        "memory_bytes": args.mem_limit * 1024 * 1024,
        "include_prefix_best": args.prefix_best,
    }


def _post(client: httpx.Client, url: str, body: dict, **params) -> dict:
    resp = client.post(url, json=body, params=params or None)
    if resp.status_code >= 400:
        detail = resp.json().get("detail", resp.text) if resp.content else resp.text
        raise SystemExit(_fail(f"{url}: {detail}", code=2 if resp.status_code == 422 else 1))
    return resp.json()


def _fail(message: str, code: int = 1) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_run(args) -> int:
    with _client(args.server) as client:
        body = _run_request(args)
        created = _post(client, "/runs", body)
        run_id = created["run_id"]
        print(f"run {run_id}")
        failures: dict[str, str] = {}
        for phase in PIPELINE_PHASES:
            result = _post(client, f"/runs/{run_id}/phases/{phase}", body)
            failures.update(result.get("failures", {}))
            print(f"phase {phase}: {result.get('tasks', 0)} tasks, "
                  f"{len(result.get('failures', {}))} failures")
        report = _post(client, f"/runs/{run_id}/report", body, fmt=args.format)
        for fmt, path in sorted(report.get("files", {}).items()):
            print(f"report [{fmt}]: {path}")
        for task_id, msg in sorted(failures.items()):
            print(f"failed task {task_id}: {msg}", file=sys.stderr)
        return 1 if failures else 0


def _cmd_phase(phase: str):
    def cmd(args) -> int:
        with _client(args.server) as client:
            body = _run_request(args)
            created = _post(client, "/runs", body)
            run_id = created["run_id"]
            result = _post(client, f"/runs/{run_id}/phases/{phase}", body)
            failures = result.get("failures", {})
            print(f"run {run_id} phase {phase}: {result.get('tasks', 0)} tasks, "
                  f"{len(failures)} failures")
            for task_id, msg in sorted(failures.items()):
                print(f"failed task {task_id}: {msg} [phase {phase}]", file=sys.stderr)
            return 1 if failures else 0

    return cmd


def cmd_report(args) -> int:
    with _client(args.server) as client:
        body = _run_request(args)
        created = _post(client, "/runs", body)
        run_id = created["run_id"]
        report = _post(client, f"/runs/{run_id}/report", body, fmt=args.format)
        for fmt, path in sorted(report.get("files", {}).items()):
            print(f"report [{fmt}]: {path}")
        return 0


def cmd_score(args) -> int:
    with _client(args.server) as client:
        if args.mode == "source":
            a = Path(args.a).read_text("utf-8")
            b = Path(args.b).read_text("utf-8")
            out = _post(client, "/score/source", {"a": a, "b": b})
        else:
            out = _post(client, "/score/bytes", {"a": _listing_arg(args.a),
                                                 "b": _listing_arg(args.b)})
        print(json.dumps(out, sort_keys=True, indent=1))
        return 0


def _listing_arg(path: str) -> dict:
    """A ByteListing JSON file, or any binary file taken as plain bytes."""
    p = Path(path)
    if p.suffix == ".json":
        return json.loads(p.read_text("utf-8"))
    data = p.read_bytes()
    return {"bytes_b64": base64.b64encode(data).decode("ascii"), "mask_b64": ""}


def cmd_juliet(args) -> int:
    findings = _read_jsonl_map(args.findings, "function_id", "flagged")
    labels = _read_jsonl_map(args.labels, "function_id", "label")
    with _client(args.server) as client:
        out = _post(client, "/analysis/juliet", {"findings": findings, "labels": labels})
        print(json.dumps(out, sort_keys=True, indent=1))
        return 0


def _read_jsonl_map(path: str, key: str, value: str) -> dict:
    out = {}
    for line in Path(path).read_text("utf-8").splitlines():
        if line.strip():
            obj = json.loads(line)
            out[obj[key]] = obj[value]
    return out


def cmd_serve(args) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decaf",
        description="Candidate-search decompilation harness",
    )
    parser.add_argument("--server", default=os.environ.get("DECAF_SERVER"),
                        help="remote service URL (default: in-process)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="full pipeline: generate through report")
    _add_run_args(run_p)
    run_p.add_argument("--format", default="json,csv,markdown")
    run_p.set_defaults(func=cmd_run)

    for phase in PIPELINE_PHASES:
        p = sub.add_parser(phase, help=f"run only the {phase} phase (resumable)")
        _add_run_args(p)
        p.set_defaults(func=_cmd_phase(phase))

    rep = sub.add_parser("report", help="(re-)emit reports for a finished run")
    _add_run_args(rep)
    rep.add_argument("--format", default="json,csv,markdown")
    rep.set_defaults(func=cmd_report)

    score = sub.add_parser("score", help="score two byte listings or source files")
    score.add_argument("mode", choices=("bytes", "source"))
    score.add_argument("a")
    score.add_argument("b")
    score.set_defaults(func=cmd_score)

    juliet = sub.add_parser("juliet", help="precision/recall/F1 over findings")
    juliet.add_argument("--findings", required=True,
                        help="JSONL of {function_id, flagged}")
    juliet.add_argument("--labels", required=True,
                        help="JSONL of {function_id, label:(good|bad)}")
    juliet.set_defaults(func=cmd_juliet)

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except SystemExit as e:
        raise
    except httpx.HTTPError as e:
        return _fail(f"service unreachable: {e}")
    except OSError as e:
        return _fail(str(e), code=2)


if __name__ == "__main__":
    sys.exit(main())
