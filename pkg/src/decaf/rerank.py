"""Rank a task's candidates under each selection policy.

Policies: length-normalized log-probability, byte distance to the reference,
a neural scorer fed diff-compressed disassembly, the two-stage composite
(exact byte-wise matches first, then descending neural score), and an
execution oracle used only for upper-limit curves. Ties everywhere break by
ascending sample index, which makes every ordering invariant under input
permutation. Candidates that fail to compile are ranked last, never
discarded, so the compile rate of the selected candidate stays measurable
per policy.
"""

from __future__ import annotations

import difflib
import json
import logging
import os
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import httpx

from .errors import (
    ContractError,
    ParseError,
    PolicyUnavailableError,
    ProtocolError,
    TransportError,
)
from .generation import Candidate
from .listings import ByteListing, DisassemblyListing
from .metrics import exact_match, wildcard_levenshtein
from .sandbox import Verdict

log = logging.getLogger(__name__)

SCORER_ENDPOINT_ENV = "DECAF_SCORER_ENDPOINT"
POLICIES = ("logprob", "bytedist", "neural", "two_stage", "oracle")
DEFAULT_ALPHA = 0.6
_RETRIES = 3


@dataclass(frozen=True)
class RankedSelection:
    policy_id: str
    ordering: tuple[str, ...]  # candidate ids, best first
    scores: dict[str, float]
    selected: str
    selected_compiled: bool
    alpha: Optional[float] = None

    def to_json(self) -> dict:
        obj = {
            "policy_id": self.policy_id,
            "ordering": list(self.ordering),
            "scores": {k: self.scores[k] for k in sorted(self.scores)},
            "selected": self.selected,
            "selected_compiled": self.selected_compiled,
        }
        if self.alpha is not None:
            obj["alpha"] = self.alpha
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "RankedSelection":
        return cls(
            policy_id=obj["policy_id"],
            ordering=tuple(obj["ordering"]),
            scores=dict(obj.get("scores", {})),
            selected=obj["selected"],
            selected_compiled=obj.get("selected_compiled", False),
            alpha=obj.get("alpha"),
        )


@dataclass(frozen=True)
class ScorerRequest:
    reference_canonical: str
    candidate_diff: str
    stripped: bool = False

    def to_json(self) -> dict:
        return {
            "reference": self.reference_canonical,
            "diff": self.candidate_diff,
            "stripped": self.stripped,
        }


@dataclass
class ScoredCandidate:
    """Everything a policy may need about one candidate."""

    candidate: Candidate
    listing: Optional[ByteListing] = None
    disassembly: Optional[DisassemblyListing] = None
    verdict: Optional[Verdict] = None

    @property
    def compiled(self) -> bool:
        return self.candidate.status not in ("generated", "compile_failed")

    @property
    def sample_index(self) -> int:
        return self.candidate.sample_index

    @property
    def cid(self) -> str:
        return self.candidate.candidate_id


def length_penalty(token_count: int, alpha: float) -> float:
    return ((5.0 + token_count) / 6.0) ** alpha


def logprob_score(candidate: Candidate, alpha: float = DEFAULT_ALPHA) -> float:
    """Sum of token log-probs divided by the length penalty; higher is better."""
    if not candidate.has_logprobs:
        raise PolicyUnavailableError(
            f"candidate {candidate.candidate_id} carries no token log-probabilities"
        )
    return candidate.sum_logprob / length_penalty(candidate.token_count, alpha)


def _selection(policy_id: str, ranked: list[ScoredCandidate], scores: dict[str, float],
               alpha: Optional[float] = None) -> RankedSelection:
    ordering = tuple(sc.cid for sc in ranked)
    selected = ordering[0] if ordering else ""
    selected_compiled = bool(ranked) and ranked[0].compiled
    for sc in ranked:
        if sc.compiled:
            selected = sc.cid
            selected_compiled = True
            break
    return RankedSelection(
        policy_id=policy_id,
        ordering=ordering,
        scores=scores,
        selected=selected,
        selected_compiled=selected_compiled,
        alpha=alpha,
    )


def logprob_rank(candidates: list[ScoredCandidate], alpha: float = DEFAULT_ALPHA) -> RankedSelection:
    if not any(sc.candidate.has_logprobs for sc in candidates):
        raise PolicyUnavailableError("no candidate carries token log-probabilities")
    scores = {
        sc.cid: logprob_score(sc.candidate, alpha)
        for sc in candidates
        if sc.candidate.has_logprobs
    }
    ranked = sorted(
        candidates,
        key=lambda sc: (
            0 if sc.cid in scores else 1,
            -scores.get(sc.cid, 0.0),
            sc.sample_index,
        ),
    )
    return _selection("logprob", ranked, scores, alpha=alpha)


def bytedist_rank(candidates: list[ScoredCandidate], reference: ByteListing) -> RankedSelection:
    """Ascending wildcard byte distance; unlistable and failed candidates trail."""
    if reference is None or len(reference.bytes) == 0:
        raise ContractError("bytedist ranking requires nonempty reference bytes")
    scores: dict[str, float] = {}
    for sc in candidates:
        if sc.compiled and sc.listing is not None:
            scores[sc.cid] = -wildcard_levenshtein(sc.listing, reference).normalized
    ranked = sorted(
        candidates,
        key=lambda sc: (
            0 if sc.cid in scores else (1 if sc.compiled else 2),
            -scores.get(sc.cid, 0.0),
            sc.sample_index,
        ),
    )
    return _selection("bytedist", ranked, scores)


def diff_compress(reference: DisassemblyListing, candidate: DisassemblyListing) -> ScorerRequest:
    """Pair the reference disassembly with a unified diff to the candidate's.

    Applying the diff to the reference canonical text reproduces the
    candidate canonical text exactly.
    """
    diff = unified_diff(reference.canonical, candidate.canonical)
    return ScorerRequest(
        reference_canonical=reference.canonical,
        candidate_diff=diff,
        stripped=reference.stripped_view,
    )


def unified_diff(a: str, b: str, context: int = 3) -> str:
    lines = difflib.unified_diff(
        a.splitlines(), b.splitlines(), fromfile="reference", tofile="candidate",
        n=context, lineterm="",
    )
    return "\n".join(lines)


_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")


def apply_unified_diff(text: str, diff: str) -> str:
    """Apply a unified diff produced by :func:`unified_diff`."""
    if not diff.strip():
        return text
    src = text.splitlines()
    out: list[str] = []
    pos = 0
    lines = diff.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i]
        if line.startswith(("---", "+++")):
            i += 1
            continue
        m = _HUNK_RE.match(line)
        if not m:
            raise ContractError(f"bad diff hunk header: {line!r}")
        start = int(m.group(1))
        length = int(m.group(2)) if m.group(2) is not None else 1
        hunk_start = start - 1 if length > 0 else start
        out.extend(src[pos:hunk_start])
        pos = hunk_start
        i += 1
        while i < len(lines) and not lines[i].startswith("@@"):
            body = lines[i]
            if body.startswith(" "):
                out.append(body[1:])
                pos += 1
            elif body.startswith("-"):
                if pos >= len(src) or src[pos] != body[1:]:
                    raise ContractError(f"diff does not apply at line {pos + 1}")
                pos += 1
            elif body.startswith("+"):
                out.append(body[1:])
            elif body.startswith("\\"):
                pass  # "No newline" marker
            else:
                break
            i += 1
    out.extend(src[pos:])
    return "\n".join(out)


class ReplayScorer:
    """Scores keyed by (task_id, candidate_id) from a line-delimited file."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self._scores: dict[str, float] = {}
        try:
            raw = self.path.read_text("utf-8")
        except FileNotFoundError:
            raise ParseError("replay score file not found", path=str(path))
        for lineno, line in enumerate(raw.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                self._scores[obj["candidate_id"]] = _check_score(float(obj["score"]))
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ParseError(f"bad score record: {e}", path=str(path), line=lineno)

    def score(self, req: ScorerRequest, candidate_id: str = "") -> float:
        if candidate_id not in self._scores:
            raise PolicyUnavailableError(f"no replay score for {candidate_id!r}")
        return self._scores[candidate_id]


class RemoteScorer:
    """HTTP client for the scorer wire protocol: {reference, diff, stripped} -> {score}."""

    def __init__(self, endpoint: str, transport: Optional[httpx.BaseTransport] = None):
        self.endpoint = endpoint
        self._client = httpx.Client(transport=transport, timeout=None)
        self._cache: dict[tuple[str, str], float] = {}

    def score(self, req: ScorerRequest, candidate_id: str = "") -> float:
        key = (req.reference_canonical, req.candidate_diff)
        if key in self._cache:
            return self._cache[key]
        delay = 1.0
        for attempt in range(_RETRIES + 1):
            try:
                resp = self._client.post(self.endpoint, json=req.to_json(), timeout=120.0)
                resp.raise_for_status()
                payload = resp.json()
                break
            except (httpx.TransportError, httpx.HTTPStatusError) as e:
                if attempt == _RETRIES:
                    raise TransportError(f"scorer at {self.endpoint}: {e}") from e
                time.sleep(delay)
                delay *= 2
            except json.JSONDecodeError as e:
                raise ProtocolError(f"scorer returned non-JSON: {e}") from e
        if not isinstance(payload, dict) or "score" not in payload:
            raise ProtocolError(f"scorer response missing score: {json.dumps(payload)[:200]}")
        value = _check_score(float(payload["score"]))
        self._cache[key] = value
        return value


def _check_score(value: float) -> float:
    if not 0.0 <= value <= 1.0:
        raise ProtocolError(f"scorer returned out-of-range score {value}")
    return value


def neural_score(req: ScorerRequest, scorer, candidate_id: str = "") -> float:
    """Equivalence probability from the scorer backend, validated to [0, 1]."""
    return _check_score(float(scorer.score(req, candidate_id)))


def neural_rank(
    candidates: list[ScoredCandidate],
    reference: DisassemblyListing,
    scorer,
) -> RankedSelection:
    scores: dict[str, float] = {}
    for sc in candidates:
        if sc.compiled and sc.disassembly is not None:
            req = diff_compress(reference, sc.disassembly)
            scores[sc.cid] = neural_score(req, scorer, sc.cid)
    ranked = sorted(
        candidates,
        key=lambda sc: (
            0 if sc.cid in scores else (1 if sc.compiled else 2),
            -scores.get(sc.cid, 0.0),
            sc.sample_index,
        ),
    )
    return _selection("neural", ranked, scores)


def two_stage_rank(
    candidates: list[ScoredCandidate],
    reference: ByteListing,
    reference_disassembly: Optional[DisassemblyListing],
    scorer,
) -> RankedSelection:
    """Exact byte-wise matches first, then descending neural score.

    Tier 1: exact matches modulo relocation alignment, by sample index.
    Tier 2: remaining compiling candidates by descending scorer probability.
    Tier 3: everything else by sample index. The scorer is consulted only
    when tier 2 is nonempty; with no exact match and no scorer the policy is
    unavailable rather than silently degraded.
    """
    if reference is None:
        raise ContractError("two-stage ranking requires reference bytes")
    tier1, tier2, tier3 = [], [], []
    for sc in candidates:
        if sc.compiled and sc.listing is not None and exact_match(sc.listing, reference):
            tier1.append(sc)
        elif sc.compiled and sc.disassembly is not None:
            tier2.append(sc)
        else:
            tier3.append(sc)
    scores: dict[str, float] = {sc.cid: 1.0 for sc in tier1}
    if tier2:
        if scorer is None or reference_disassembly is None:
            if not tier1:
                raise PolicyUnavailableError(
                    "two-stage: no exact match and no scorer available"
                )
            log.warning("two-stage: scorer unavailable; tier-2 falls back to sample order")
            tier2.sort(key=lambda sc: sc.sample_index)
        else:
            for sc in tier2:
                req = diff_compress(reference_disassembly, sc.disassembly)
                scores[sc.cid] = neural_score(req, scorer, sc.cid)
            tier2.sort(key=lambda sc: (-scores[sc.cid], sc.sample_index))
    tier1.sort(key=lambda sc: sc.sample_index)
    tier3.sort(key=lambda sc: sc.sample_index)
    return _selection("two_stage", tier1 + tier2 + tier3, scores)


def oracle_rank(candidates: list[ScoredCandidate], reference: ByteListing) -> RankedSelection:
    """Selection with full knowledge of execution verdicts.

    Upper-limit curves only; never reported as a reranking policy result.
    Equivalent candidates first by ascending byte distance, then compiling
    but inequivalent ones by distance, then the rest. When every verdict is
    exempt there is nothing to know, and the ordering falls back to the byte
    distance policy's.
    """
    verdicts = [sc.verdict for sc in candidates if sc.verdict is not None]
    if verdicts and all(v.kind == Verdict.EXEMPT for v in verdicts):
        fallback = bytedist_rank(candidates, reference)
        return RankedSelection(
            policy_id="oracle",
            ordering=fallback.ordering,
            scores=fallback.scores,
            selected=fallback.selected,
            selected_compiled=fallback.selected_compiled,
        )

    def dist(sc: ScoredCandidate) -> float:
        if sc.listing is None or reference is None:
            return 1.0
        return wildcard_levenshtein(sc.listing, reference).normalized

    def tier(sc: ScoredCandidate) -> int:
        if sc.verdict is not None and sc.verdict.kind == Verdict.EQUIVALENT:
            return 0
        if sc.compiled:
            return 1
        return 2

    ranked = sorted(candidates, key=lambda sc: (tier(sc), dist(sc), sc.sample_index))
    scores = {sc.cid: -dist(sc) for sc in ranked if sc.listing is not None}
    return _selection("oracle", ranked, scores)


def make_scorer(endpoint: Optional[str] = None, replay_path: Optional[str] = None,
                transport: Optional[httpx.BaseTransport] = None):
    """Replay file wins; else remote endpoint (env override honored)."""
    if replay_path:
        return ReplayScorer(replay_path)
    endpoint = os.environ.get(SCORER_ENDPOINT_ENV) or endpoint
    if not endpoint:
        return None
    if "://" not in endpoint:
        return ReplayScorer(endpoint)
    return RemoteScorer(endpoint, transport=transport)
