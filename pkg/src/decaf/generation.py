"""Obtain candidate decompilations from a pluggable generator.

Two backends: a remote completion client speaking a minimal JSON wire
protocol with per-token log-probabilities, and a deterministic replay
generator reading candidates back from line-delimited JSON files. Replay is
the backend used for reproducible runs and for every test in this repo.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import httpx

from .errors import ParseError, PersistenceError, ProtocolError, TransportError, ValidationError

log = logging.getLogger(__name__)

GEN_ENDPOINT_ENV = "DECAF_GEN_ENDPOINT"
DEFAULT_TEMPERATURE = 0.8
_RETRIES = 3


@dataclass(frozen=True)
class GeneratorConfig:
    endpoint: str = ""  # URL for remote mode, file path for replay mode
    n_samples: int = 32
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = 4096
    request_timeout: float = 120.0
    prompt_template_id: str = "default-v1"
    seed: Optional[int] = None

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValidationError("n_samples must be >= 1")
        if self.temperature < 0:
            raise ValidationError("temperature must be non-negative")
        if self.max_tokens < 1:
            raise ValidationError("max_tokens must be >= 1")

    def to_json(self) -> dict:
        return {
            "endpoint": self.endpoint,
            "n_samples": self.n_samples,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "request_timeout": self.request_timeout,
            "prompt_template_id": self.prompt_template_id,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GeneratorConfig":
        return cls(**{k: obj[k] for k in cls.__dataclass_fields__ if k in obj})


@dataclass(frozen=True)
class Candidate:
    """One sampled decompilation for a task."""

    candidate_id: str  # "<task_id>#<sample index>"
    source: str
    token_logprobs: tuple[float, ...] = ()
    status: str = "generated"  # generated|compiled|compile_failed|executed|selected

    @property
    def sample_index(self) -> int:
        try:
            return int(self.candidate_id.rsplit("#", 1)[1])
        except (IndexError, ValueError):
            return 0

    @property
    def token_count(self) -> int:
        return len(self.token_logprobs)

    @property
    def sum_logprob(self) -> float:
        return math.fsum(self.token_logprobs)

    @property
    def has_logprobs(self) -> bool:
        return bool(self.token_logprobs)

    def with_status(self, status: str) -> "Candidate":
        return replace(self, status=status)

    def to_json(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "source": self.source,
            "token_logprobs": list(self.token_logprobs),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Candidate":
        return cls(
            candidate_id=obj["candidate_id"],
            source=obj["source"],
            token_logprobs=tuple(obj.get("token_logprobs") or ()),
        )


def load_prompt_template(template_id: str) -> str:
    """Prompt templates are versioned data files shipped with the package."""
    try:
        return resources.files("decaf").joinpath(f"prompts/{template_id}.txt").read_text("utf-8")
    except FileNotFoundError:
        raise ValidationError(f"unknown prompt template {template_id!r}")


def build_prompt(task, cfg: GeneratorConfig) -> str:
    template = load_prompt_template(cfg.prompt_template_id)
    return template.format(
        decompiler_output=task.decompiler_output,
        dependencies=task.dependencies,
    )


class ReplayGenerator:
    """Reads stored candidates; byte-identical output on every invocation."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self._by_task: dict[str, list[Candidate]] = {}
        for cand in load_candidates(self.path):
            task_id = cand.candidate_id.rsplit("#", 1)[0]
            self._by_task.setdefault(task_id, []).append(cand)
        for cands in self._by_task.values():
            cands.sort(key=lambda c: c.sample_index)

    def sample(self, task, cfg: GeneratorConfig) -> list[Candidate]:
        cands = self._by_task.get(task.task_id, [])
        if not cands:
            log.warning("replay file %s has no candidates for %s", self.path, task.task_id)
        return cands[: cfg.n_samples]


class RemoteGenerator:
    """Completion-protocol client: POST {prompt, n, temperature, max_tokens,
    logprobs} and read completions with optional per-token log-probs."""

    def __init__(self, endpoint: str, transport: Optional[httpx.BaseTransport] = None):
        self.endpoint = endpoint
        self._client = httpx.Client(transport=transport, timeout=None)

    def sample(self, task, cfg: GeneratorConfig) -> list[Candidate]:
        body = {
            "prompt": build_prompt(task, cfg),
            "n": cfg.n_samples,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
            "logprobs": True,
        }
        if cfg.seed is not None:
            body["seed"] = cfg.seed
        payload = self._post(body, cfg.request_timeout)
        completions = payload.get("completions", payload.get("choices"))
        if not isinstance(completions, list):
            raise ProtocolError(
                f"generator response has no completions: {json.dumps(payload)[:300]}"
            )
        candidates = []
        warned = False
        for i, comp in enumerate(completions):
            text, logprobs = _parse_completion(comp, payload)
            if not logprobs and not warned:
                log.warning(
                    "backend returned no token log-probs; log-prob reranking disabled"
                )
                warned = True
            candidates.append(
                Candidate(
                    candidate_id=f"{task.task_id}#{i}",
                    source=text,
                    token_logprobs=tuple(logprobs),
                )
            )
        return candidates

    def _post(self, body: dict, timeout: float) -> dict:
        delay = 1.0
        for attempt in range(_RETRIES + 1):
            try:
                resp = self._client.post(self.endpoint, json=body, timeout=timeout)
                resp.raise_for_status()
                return resp.json()
            except (httpx.TransportError, httpx.HTTPStatusError) as e:
                if attempt == _RETRIES:
                    raise TransportError(f"generator at {self.endpoint}: {e}") from e
                log.warning("generator request failed (%s); retrying in %.1fs", e, delay)
                time.sleep(delay)
                delay *= 2
            except json.JSONDecodeError as e:
                raise ProtocolError(f"generator returned non-JSON: {e}") from e
        raise AssertionError("unreachable")


def _parse_completion(comp, payload: dict) -> tuple[str, list[float]]:
    if not isinstance(comp, dict) or "text" not in comp:
        raise ProtocolError(f"malformed completion: {json.dumps(comp)[:200]}")
    lp = comp.get("token_logprobs")
    if lp is None and isinstance(comp.get("logprobs"), dict):
        lp = comp["logprobs"].get("token_logprobs")
    logprobs = [float(x) for x in lp] if lp else []
    if any(x > 0 for x in logprobs):
        raise ProtocolError(f"positive token log-probability in {json.dumps(comp)[:200]}")
    return comp["text"], logprobs


def make_generator(cfg: GeneratorConfig, replay_path: Optional[str] = None):
    """Replay file wins when given; otherwise a remote client on the
    configured endpoint (``DECAF_GEN_ENDPOINT`` overrides the config)."""
    if replay_path:
        return ReplayGenerator(replay_path)
    endpoint = os.environ.get(GEN_ENDPOINT_ENV) or cfg.endpoint
    if not endpoint:
        raise ValidationError("no generator endpoint and no replay file")
    if "://" not in endpoint:
        return ReplayGenerator(endpoint)
    return RemoteGenerator(endpoint)


def sample_candidates(task, cfg: GeneratorConfig, generator=None) -> list[Candidate]:
    """Sample up to ``cfg.n_samples`` candidates for one task."""
    gen = generator if generator is not None else make_generator(cfg)
    return gen.sample(task, cfg)


def load_candidates(path: str | os.PathLike) -> list[Candidate]:
    path = Path(path)
    out = []
    try:
        raw = path.read_text("utf-8")
    except FileNotFoundError:
        raise ParseError("replay candidate file not found", path=str(path))
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(Candidate.from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError) as e:
            raise ParseError(f"bad candidate record: {e}", path=str(path), line=lineno)
    return out


def replay_store(path: str | os.PathLike, candidates: list[Candidate], append: bool = False) -> None:
    """Persist candidates losslessly in the replay format."""
    if not candidates:
        raise ValidationError("refusing to store an empty candidate list")
    mode = "a" if append else "w"
    try:
        with open(path, mode, encoding="utf-8") as f:
            for cand in candidates:
                f.write(json.dumps(cand.to_json(), sort_keys=True) + "\n")
    except OSError as e:
        raise PersistenceError(f"cannot write candidates to {path}: {e}") from e
