"""Distance and match functions over function bytes and source text.

Byte comparisons are relocation-aware: positions covered by pending
relocations are wildcards that substitute for free, so the distance
concentrates on semantically meaningful differences. Wildcards apply to
substitutions only; insertions and deletions still cost one edit each, and
masks on both sequences are honored (both sides of a comparison may carry
pending relocations).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ContractError


@dataclass(frozen=True)
class DistanceResult:
    """Raw edit count plus length-normalized distance in [0, 1]."""

    raw: int
    normalized: float

    def __post_init__(self):
        if self.raw < 0 or not (0.0 <= self.normalized <= 1.0):
            raise ValueError(f"degenerate distance: {self.raw}, {self.normalized}")


def _normalize(raw: int, len_a: int, len_b: int) -> DistanceResult:
    longest = max(len_a, len_b)
    return DistanceResult(raw=raw, normalized=(raw / longest) if longest else 0.0)


def wildcard_levenshtein(a, b) -> DistanceResult:
    """Levenshtein distance between two byte listings, wildcard-aware.

    Unit insert/delete/substitute costs, except substitution is free when
    either position is covered by its listing's wildcard mask. Normalized by
    the maximum of the two lengths (0 when both are empty).
    """
    xa, ma = a.bytes, a.wildcard_mask
    xb, mb = b.bytes, b.wildcard_mask
    if len(xa) != len(ma) or len(xb) != len(mb):
        raise ContractError("wildcard mask length does not match byte length")
    # Keep the rolling row over the shorter sequence.
    if len(xb) > len(xa):
        xa, ma, xb, mb = xb, mb, xa, ma
    prev = list(range(len(xb) + 1))
    for i in range(1, len(xa) + 1):
        cur = [i] + [0] * len(xb)
        ai, wa = xa[i - 1], ma[i - 1]
        for j in range(1, len(xb) + 1):
            sub = 0 if (ai == xb[j - 1] or wa or mb[j - 1]) else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + sub)
        prev = cur
    return _normalize(prev[len(xb)], len(a.bytes), len(b.bytes))


def exact_match(a, b) -> bool:
    """Equal-length byte equality, modulo wildcard positions on either side."""
    if len(a.bytes) != len(b.bytes):
        return False
    return all(
        x == y or wx or wy
        for x, y, wx, wy in zip(a.bytes, b.bytes, a.wildcard_mask, b.wildcard_mask)
    )


_WS_RUN = re.compile(r"\s+")


def normalize_whitespace(text: str) -> str:
    return _WS_RUN.sub(" ", text).strip()


def source_edit_distance(a: str, b: str) -> DistanceResult:
    """Character-level Levenshtein on whitespace-normalized source text."""
    sa = normalize_whitespace(a)
    sb = normalize_whitespace(b)
    if len(sb) > len(sa):
        sa, sb = sb, sa
    prev = list(range(len(sb) + 1))
    for i in range(1, len(sa) + 1):
        cur = [i] + [0] * len(sb)
        ca = sa[i - 1]
        for j in range(1, len(sb) + 1):
            sub = 0 if ca == sb[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + sub)
        prev = cur
    return _normalize(prev[len(sb)], len(sa), len(sb))
