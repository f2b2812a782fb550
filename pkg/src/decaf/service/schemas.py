"""Request/response models for the HTTP service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class GeneratorSettings(BaseModel):
    endpoint: str = ""
    n_samples: int = 32
    temperature: float = 0.8
    max_tokens: int = 4096
    request_timeout: float = 120.0
    prompt_template_id: str = "default-v1"
    seed: Optional[int] = None


class RunRequest(BaseModel):
    tasks_path: str
    run_root: str = "runs"
    run_id: str = ""
    generator: GeneratorSettings = Field(default_factory=GeneratorSettings)
    profiles_path: Optional[str] = None
    profile_id: str = "gcc-O0"
    policies: list[str] = ["logprob", "bytedist"]
    seed: int = 0
    jobs: int = 4
    replay_candidates: Optional[str] = None
    replay_scores: Optional[str] = None
    scorer_endpoint: Optional[str] = None
    cpu_seconds: int = 10
    memory_bytes: int = 512 * 1024 * 1024
    include_prefix_best: bool = False


class RunCreated(BaseModel):
    run_id: str
    manifest: dict


class PhaseResult(BaseModel):
    run_id: str
    phase: str
    tasks: int = 0
    failures: dict[str, str] = {}
    files: dict[str, str] = {}


class RunStatus(BaseModel):
    run_id: str
    phases: dict[str, dict]


class ByteListingPayload(BaseModel):
    bytes_b64: str
    mask_b64: str = ""
    symbol: str = ""
    origin_profile: str = ""


class ByteScoreRequest(BaseModel):
    a: ByteListingPayload
    b: ByteListingPayload


class DistancePayload(BaseModel):
    raw: int
    normalized: float


class ByteScoreResponse(BaseModel):
    distance: DistancePayload
    exact_match: bool


class SourceScoreRequest(BaseModel):
    a: str
    b: str


class SourceScoreResponse(BaseModel):
    distance: DistancePayload


class LogprobScoreRequest(BaseModel):
    token_logprobs: list[float]
    alpha: float = 0.6


class LogprobScoreResponse(BaseModel):
    score: float


class PassAtKRequest(BaseModel):
    n: int
    c: int
    k: int


class ExpectedMinRequest(BaseModel):
    values: list[float]
    k: int


class EstimatorResponse(BaseModel):
    value: float


class JulietRequest(BaseModel):
    findings: dict[str, bool]
    labels: dict[str, str]


class JulietResponse(BaseModel):
    precision: float
    recall: float
    f1: float
    support: int
    precision_defined: bool


class CanonicalizeRequest(BaseModel):
    raw: str


class CanonicalizeResponse(BaseModel):
    canonical: str
