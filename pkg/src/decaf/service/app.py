"""HTTP front end for the decompilation-search pipeline.

Run control lives under ``/runs``; the pure scoring and estimator operations
are exposed under ``/score`` and ``/analysis`` so other tooling can reuse
them without importing the package. Paths in requests are interpreted on the
host running the service.
"""

from __future__ import annotations

import base64
import logging

from fastapi import FastAPI, HTTPException

from .. import analysis, metrics, toolchain
from ..errors import ContractError, DecafError, ParseError, PolicyUnavailableError, ValidationError
from ..generation import Candidate, GeneratorConfig
from ..listings import ByteListing
from ..pipeline import PHASES, Pipeline, RunConfig
from ..rerank import logprob_score
from ..sandbox import Limits
from . import schemas

log = logging.getLogger(__name__)

app = FastAPI(title="decaf", version="0.1.0")


def _http_error(e: DecafError) -> HTTPException:
    status = 422 if isinstance(e, (ValidationError, ContractError, ParseError)) else 500
    return HTTPException(status_code=status, detail=str(e))


def _pipeline(req: schemas.RunRequest) -> Pipeline:
    profiles = toolchain.builtin_profiles()
    if req.profiles_path:
        profiles.update(toolchain.load_profiles(req.profiles_path))
    cfg = RunConfig(
        tasks_path=req.tasks_path,
        run_root=req.run_root,
        run_id=req.run_id,
        generator=GeneratorConfig(**req.generator.model_dump()),
        profiles=profiles,
        default_profile_id=req.profile_id,
        policies=tuple(req.policies),
        seed=req.seed,
        jobs=req.jobs,
        replay_candidates=req.replay_candidates,
        replay_scores=req.replay_scores,
        scorer_endpoint=req.scorer_endpoint,
        limits=Limits(cpu_seconds=req.cpu_seconds, memory_bytes=req.memory_bytes),
        include_prefix_best=req.include_prefix_best,
    )
    return Pipeline(cfg)


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": app.version}


@app.post("/runs", response_model=schemas.RunCreated)
def create_run(req: schemas.RunRequest) -> schemas.RunCreated:
    try:
        pipe = _pipeline(req)
    except DecafError as e:
        raise _http_error(e)
    return schemas.RunCreated(run_id=pipe.store.run_id, manifest=pipe.store.read_manifest())


@app.post("/runs/{run_id}/status", response_model=schemas.RunStatus)
def run_status(run_id: str, req: schemas.RunRequest) -> schemas.RunStatus:
    # Status needs the task set and run root, so it takes the same body as /runs.
    req.run_id = run_id
    try:
        pipe = _pipeline(req)
    except DecafError as e:
        raise _http_error(e)
    return schemas.RunStatus(**pipe.status())


@app.post("/runs/{run_id}/phases/{phase}", response_model=schemas.PhaseResult)
def run_phase(run_id: str, phase: str, req: schemas.RunRequest) -> schemas.PhaseResult:
    if phase not in PHASES:
        raise HTTPException(status_code=422, detail=f"unknown phase {phase!r}; one of {PHASES}")
    req.run_id = run_id
    try:
        pipe = _pipeline(req)
        result = getattr(pipe, f"phase_{phase}")()
    except DecafError as e:
        raise _http_error(e)
    return schemas.PhaseResult(run_id=pipe.store.run_id, **result)


@app.post("/runs/{run_id}/report", response_model=schemas.PhaseResult)
def run_report(run_id: str, req: schemas.RunRequest, fmt: str = "json,csv,markdown"):
    req.run_id = run_id
    formats = tuple(f.strip() for f in fmt.split(",") if f.strip())
    try:
        pipe = _pipeline(req)
        result = pipe.phase_report(formats)
    except DecafError as e:
        raise _http_error(e)
    return schemas.PhaseResult(run_id=pipe.store.run_id, **result)


@app.post("/score/bytes", response_model=schemas.ByteScoreResponse)
def score_bytes(req: schemas.ByteScoreRequest) -> schemas.ByteScoreResponse:
    try:
        a = _listing(req.a)
        b = _listing(req.b)
        dist = metrics.wildcard_levenshtein(a, b)
        exact = metrics.exact_match(a, b)
    except (DecafError, ValueError) as e:
        raise HTTPException(status_code=422, detail=str(e))
    return schemas.ByteScoreResponse(
        distance=schemas.DistancePayload(raw=dist.raw, normalized=dist.normalized),
        exact_match=exact,
    )


def _listing(payload: schemas.ByteListingPayload) -> ByteListing:
    data = base64.b64decode(payload.bytes_b64)
    if payload.mask_b64:
        mask = tuple(x != 0 for x in base64.b64decode(payload.mask_b64))
    else:
        mask = (False,) * len(data)
    return ByteListing(data, mask, payload.symbol, payload.origin_profile)


@app.post("/score/source", response_model=schemas.SourceScoreResponse)
def score_source(req: schemas.SourceScoreRequest) -> schemas.SourceScoreResponse:
    dist = metrics.source_edit_distance(req.a, req.b)
    return schemas.SourceScoreResponse(
        distance=schemas.DistancePayload(raw=dist.raw, normalized=dist.normalized)
    )


@app.post("/score/logprob", response_model=schemas.LogprobScoreResponse)
def score_logprob(req: schemas.LogprobScoreRequest) -> schemas.LogprobScoreResponse:
    cand = Candidate(candidate_id="request#0", source="", token_logprobs=tuple(req.token_logprobs))
    try:
        return schemas.LogprobScoreResponse(score=logprob_score(cand, req.alpha))
    except PolicyUnavailableError as e:
        raise HTTPException(status_code=422, detail=str(e))


@app.post("/analysis/pass-at-k", response_model=schemas.EstimatorResponse)
def pass_at_k(req: schemas.PassAtKRequest) -> schemas.EstimatorResponse:
    try:
        return schemas.EstimatorResponse(value=float(analysis.pass_at_k(req.n, req.c, req.k)))
    except ContractError as e:
        raise HTTPException(status_code=422, detail=str(e))


@app.post("/analysis/expected-min", response_model=schemas.EstimatorResponse)
def expected_min(req: schemas.ExpectedMinRequest) -> schemas.EstimatorResponse:
    try:
        return schemas.EstimatorResponse(
            value=float(analysis.expected_min_at_k(req.values, req.k))
        )
    except ContractError as e:
        raise HTTPException(status_code=422, detail=str(e))


@app.post("/analysis/juliet", response_model=schemas.JulietResponse)
def juliet(req: schemas.JulietRequest) -> schemas.JulietResponse:
    try:
        report = analysis.juliet_confusion(req.findings, req.labels)
    except ContractError as e:
        raise HTTPException(status_code=422, detail=str(e))
    return schemas.JulietResponse(
        precision=report.precision,
        recall=report.recall,
        f1=report.f1,
        support=report.support,
        precision_defined=report.precision_defined,
    )


@app.post("/toolchain/canonicalize", response_model=schemas.CanonicalizeResponse)
def canonicalize(req: schemas.CanonicalizeRequest) -> schemas.CanonicalizeResponse:
    return schemas.CanonicalizeResponse(canonical=toolchain.canonicalize(req.raw))
