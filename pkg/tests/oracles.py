"""Independent oracles the tests check the library against.

These deliberately use different algorithms than the implementations under
test: plain recursion instead of dynamic programming, full-matrix textbook
Levenshtein instead of a rolling row, exhaustive subset enumeration instead
of closed forms, arbitrary-precision arithmetic instead of doubles, and
binutils text output instead of our own ELF parsing.
"""

from __future__ import annotations

import itertools
import re
import subprocess
from fractions import Fraction

import mpmath


def brute_force_wildcard_levenshtein(a: bytes, mask_a, b: bytes, mask_b) -> int:
    """Naive exponential recursion over all edit scripts."""

    def go(i: int, j: int) -> int:
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        sub = 0 if (a[i] == b[j] or mask_a[i] or mask_b[j]) else 1
        return min(go(i + 1, j) + 1, go(i, j + 1) + 1, go(i + 1, j + 1) + sub)

    return go(0, 0)


def textbook_levenshtein(a, b) -> int:
    """Full-matrix dynamic program straight from the textbook."""
    rows, cols = len(a) + 1, len(b) + 1
    d = [[0] * cols for _ in range(rows)]
    for i in range(rows):
        d[i][0] = i
    for j in range(cols):
        d[0][j] = j
    for i in range(1, rows):
        for j in range(1, cols):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + cost)
    return d[-1][-1]


def highprec_logprob_score(logprobs, alpha) -> mpmath.mpf:
    """Length-penalized score evaluated at 50 significant digits."""
    with mpmath.workdps(50):
        total = mpmath.fsum(mpmath.mpf(x) for x in logprobs)
        lp = (mpmath.mpf(5 + len(logprobs)) / 6) ** mpmath.mpf(alpha)
        return total / lp


def enumerate_pass_at_k(n: int, c: int, k: int) -> Fraction:
    """Count k-subsets containing at least one of the first c elements."""
    hits = sum(
        1 for combo in itertools.combinations(range(n), k) if any(x < c for x in combo)
    )
    from math import comb

    return Fraction(hits, comb(n, k))


def enumerate_expected_min(values, k: int) -> Fraction:
    combos = list(itertools.combinations([Fraction(v) for v in values], k))
    return sum(min(c) for c in combos) / Fraction(len(combos))


_RELOC_LINE = re.compile(r"^([0-9a-f]+)\s+(R_\w+)\s+", re.MULTILINE)

# Field widths per relocation name, from the psABI. Independent of the
# implementation's numeric-type table.
_WIDTHS_BY_NAME = {
    "R_X86_64_64": 8, "R_X86_64_PC64": 8, "R_X86_64_GOTOFF64": 8,
    "R_X86_64_16": 2, "R_X86_64_PC16": 2, "R_X86_64_8": 1, "R_X86_64_PC8": 1,
}


def objdump_relocation_spans(object_path: str, lo: int, hi: int) -> int:
    """Total relocated bytes inside [lo, hi) of .text, per ``objdump -r``."""
    out = subprocess.run(
        ["objdump", "-r", object_path], capture_output=True, text=True, check=True
    ).stdout
    section = out.split("RELOCATION RECORDS FOR [.text]:", 1)
    if len(section) < 2:
        return 0
    body = section[1].split("RELOCATION RECORDS FOR", 1)[0]
    total = 0
    for m in _RELOC_LINE.finditer(body):
        offset = int(m.group(1), 16)
        if lo <= offset < hi:
            total += _WIDTHS_BY_NAME.get(m.group(2), 4)
    return total


def apply_patch_oracle(text: str, diff: str) -> str:
    """Minimal independent unified-diff applier."""
    if not diff.strip():
        return text
    src = text.splitlines()
    out: list[str] = []
    pos = 0
    hunk = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+\d+(?:,\d+)? @@")
    lines = diff.splitlines()
    i = 0
    while i < len(lines):
        m = hunk.match(lines[i])
        if not m:
            i += 1
            continue
        start = int(m.group(1))
        length = int(m.group(2) or "1")
        target = start - 1 if length else start
        out.extend(src[pos:target])
        pos = target
        i += 1
        while i < len(lines) and lines[i][:1] in (" ", "-", "+", "\\"):
            tag, rest = lines[i][:1], lines[i][1:]
            if tag == " ":
                out.append(src[pos])
                pos += 1
            elif tag == "-":
                pos += 1
            elif tag == "+":
                out.append(rest)
            i += 1
    out.extend(src[pos:])
    return "\n".join(out)
