"""Aggregate per-task results into tables, scaling curves, and findings stats.

Scaling curves use exact subset-expectation estimators computed with
rational arithmetic: the probability that a random k-subset of n samples
contains a success, and the expected minimum of a metric over random
k-subsets via order statistics. Both are order-independent, unlike
prefix-best curves (which can be emitted alongside for comparison).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from typing import Optional

from .errors import ContractError

METRIC_COLUMNS = ("acc", "bm", "edit", "comp")  # fixed report column order


@dataclass(frozen=True)
class PolicyOutcome:
    """What one policy selected for one task, plus how it scored."""

    selected: str
    compiled: bool
    verdict_kind: str  # equivalent|inequivalent|failed|exempt
    exact_match: bool
    byte_distance: Optional[float]
    source_distance: Optional[float]

    def to_json(self) -> dict:
        return {
            "selected": self.selected,
            "compiled": self.compiled,
            "verdict_kind": self.verdict_kind,
            "exact_match": self.exact_match,
            "byte_distance": self.byte_distance,
            "source_distance": self.source_distance,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PolicyOutcome":
        return cls(
            selected=obj["selected"],
            compiled=obj["compiled"],
            verdict_kind=obj["verdict_kind"],
            exact_match=obj["exact_match"],
            byte_distance=obj.get("byte_distance"),
            source_distance=obj.get("source_distance"),
        )


@dataclass(frozen=True)
class CandidateRow:
    """Raw per-candidate facts used for curve computation."""

    candidate_id: str
    compiled: bool
    equivalent: Optional[bool]  # None when execution was exempt/unjudged
    exact_match: bool
    source_distance: Optional[float]

    def to_json(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "compiled": self.compiled,
            "equivalent": self.equivalent,
            "exact_match": self.exact_match,
            "source_distance": self.source_distance,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CandidateRow":
        return cls(
            candidate_id=obj["candidate_id"],
            compiled=obj["compiled"],
            equivalent=obj.get("equivalent"),
            exact_match=obj["exact_match"],
            source_distance=obj.get("source_distance"),
        )


@dataclass(frozen=True)
class TaskResult:
    task_id: str
    exempt: bool
    policies: dict[str, PolicyOutcome]
    candidates: tuple[CandidateRow, ...] = ()

    def to_json(self) -> dict:
        return {
            "task_id": self.task_id,
            "exempt": self.exempt,
            "policies": {k: v.to_json() for k, v in sorted(self.policies.items())},
            "candidates": [c.to_json() for c in self.candidates],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TaskResult":
        return cls(
            task_id=obj["task_id"],
            exempt=obj.get("exempt", False),
            policies={k: PolicyOutcome.from_json(v) for k, v in obj.get("policies", {}).items()},
            candidates=tuple(CandidateRow.from_json(c) for c in obj.get("candidates", [])),
        )


@dataclass(frozen=True)
class SplitReport:
    """Percentages for one policy over one set of tasks."""

    policy_id: str
    acc: Optional[float]  # absent when every task is execution-exempt
    bm: float
    edit: Optional[float]
    comp: float
    n_tasks: int

    def cell(self, metric: str) -> str:
        value = getattr(self, metric)
        return "--" if value is None else f"{value:.1f}"


def aggregate_split(results: list[TaskResult], policy: str) -> SplitReport:
    """Acc/BM/Edit/Comp percentages for one policy.

    Acc counts equivalent verdicts among non-exempt tasks; BM counts exact
    byte matches over all tasks; Edit is the mean normalized source distance
    (x100) over tasks with a selected candidate; Comp is the share of tasks
    whose selected candidate compiled.
    """
    if not results:
        raise ContractError("aggregate_split needs at least one task result")
    outcomes = []
    for r in results:
        if policy not in r.policies:
            raise ContractError(f"task {r.task_id} has no outcome for policy {policy!r}")
        outcomes.append((r, r.policies[policy]))
    non_exempt = [(r, o) for r, o in outcomes if not r.exempt]
    acc = None
    if non_exempt:
        acc = 100.0 * sum(o.verdict_kind == "equivalent" for _, o in non_exempt) / len(non_exempt)
    bm = 100.0 * sum(o.exact_match for _, o in outcomes) / len(outcomes)
    edits = [o.source_distance for _, o in outcomes if o.source_distance is not None]
    edit = 100.0 * sum(edits) / len(edits) if edits else None
    comp = 100.0 * sum(o.compiled for _, o in outcomes) / len(outcomes)
    return SplitReport(
        policy_id=policy, acc=acc, bm=bm, edit=edit, comp=comp, n_tasks=len(outcomes)
    )


def pass_at_k(n: int, c: int, k: int) -> Fraction:
    """Probability a uniformly random k-subset of n samples has >= 1 success.

    Exact: 1 - C(n-c, k)/C(n, k), evaluated as a product of rationals.
    """
    if not 0 <= c <= n:
        raise ContractError(f"need 0 <= c <= n, got c={c} n={n}")
    if not 1 <= k <= n:
        raise ContractError(f"need 1 <= k <= n, got k={k} n={n}")
    if c == 0:
        return Fraction(0)
    if n - c < k:
        return Fraction(1)
    miss = Fraction(1)
    for i in range(k):
        miss *= Fraction(n - c - i, n - i)
    return 1 - miss


def expected_min_at_k(values: list, k: int) -> Fraction:
    """Expected minimum over uniformly random k-subsets of ``values``.

    Order-statistics form: the i-th smallest value is the minimum exactly
    when the other k-1 picks land strictly after it in sorted order, so its
    weight is C(n-i, k-1)/C(n, k).
    """
    n = len(values)
    if n == 0:
        raise ContractError("expected_min_at_k needs at least one value")
    if not 1 <= k <= n:
        raise ContractError(f"need 1 <= k <= n, got k={k} n={n}")
    ordered = sorted(Fraction(v) for v in values)
    total = Fraction(0)
    denom = comb(n, k)
    for i, v in enumerate(ordered, start=1):  # v is the i-th order statistic
        if n - i >= k - 1:
            total += v * comb(n - i, k - 1)
    return total / denom


@dataclass(frozen=True)
class ScalingCurve:
    metric_id: str  # acc | bm | edit
    k_values: tuple[int, ...]
    values: tuple[float, ...]
    estimator: str = "subset-expectation"

    def to_json(self) -> dict:
        return {
            "metric_id": self.metric_id,
            "k_values": list(self.k_values),
            "values": [round(v, 4) for v in self.values],
            "estimator": self.estimator,
        }


def scaling_curves(
    results: list[TaskResult], max_k: int, include_prefix_best: bool = False
) -> list[ScalingCurve]:
    """Best-possible performance vs. samples considered, averaged over tasks.

    acc/bm use the subset success probability; edit uses the expected
    minimum distance. Tasks contribute up to their own candidate count.
    """
    curves = []
    for metric in ("acc", "bm", "edit"):
        per_k: list[list[Fraction]] = [[] for _ in range(max_k)]
        prefix_per_k: list[list[float]] = [[] for _ in range(max_k)]
        for r in results:
            rows = list(r.candidates)
            if not rows:
                continue
            if metric == "acc":
                if r.exempt:
                    continue
                flags = [bool(row.equivalent) for row in rows]
            elif metric == "bm":
                flags = [row.exact_match for row in rows]
            else:
                dists = [row.source_distance for row in rows if row.source_distance is not None]
                if not dists:
                    continue
                for k in range(1, min(max_k, len(dists)) + 1):
                    per_k[k - 1].append(expected_min_at_k(dists, k))
                    prefix_per_k[k - 1].append(min(dists[:k]))
                continue
            n, c = len(flags), sum(flags)
            for k in range(1, min(max_k, n) + 1):
                per_k[k - 1].append(pass_at_k(n, c, k))
                prefix_per_k[k - 1].append(1.0 if any(flags[:k]) else 0.0)
        k_values = tuple(k for k in range(1, max_k + 1) if per_k[k - 1])
        values = tuple(
            float(sum(per_k[k - 1], Fraction(0)) / len(per_k[k - 1])) for k in k_values
        )
        curves.append(ScalingCurve(metric_id=metric, k_values=k_values, values=values))
        if include_prefix_best:
            pvalues = tuple(
                sum(prefix_per_k[k - 1]) / len(prefix_per_k[k - 1]) for k in k_values
            )
            curves.append(
                ScalingCurve(
                    metric_id=metric, k_values=k_values, values=pvalues,
                    estimator="prefix-best",
                )
            )
    return curves


@dataclass(frozen=True)
class FindingsReport:
    precision: float
    recall: float
    f1: float
    support: int  # number of ground-truth bad functions
    precision_defined: bool = True

    def to_json(self) -> dict:
        return {
            "precision": round(self.precision, 1),
            "recall": round(self.recall, 1),
            "f1": round(self.f1, 1),
            "support": self.support,
            "precision_defined": self.precision_defined,
        }


def juliet_confusion(findings: dict[str, bool], labels: dict[str, str]) -> FindingsReport:
    """Precision/recall/F1 over good/bad-labeled functions, as percentages.

    Functions absent from ``findings`` (decompilation or analysis failed)
    count as not flagged, which depresses recall. A run that flags nothing
    has undefined precision; it is reported as 0 with the flag cleared.
    """
    for fid in findings:
        if fid not in labels:
            raise ContractError(f"finding for unlabeled function {fid!r}")
    for fid, lab in labels.items():
        if lab not in ("good", "bad"):
            raise ContractError(f"label for {fid!r} must be good|bad, got {lab!r}")
    tp = sum(1 for fid, lab in labels.items() if lab == "bad" and findings.get(fid, False))
    fp = sum(1 for fid, lab in labels.items() if lab == "good" and findings.get(fid, False))
    fn = sum(1 for fid, lab in labels.items() if lab == "bad" and not findings.get(fid, False))
    support = tp + fn
    precision_defined = (tp + fp) > 0
    precision = 100.0 * tp / (tp + fp) if precision_defined else 0.0
    recall = 100.0 * tp / support if support else 0.0
    f1 = (2 * precision * recall / (precision + recall)) if (precision + recall) else 0.0
    return FindingsReport(
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        precision_defined=precision_defined,
    )


def reduce_sarif(sarif: dict, function_ids: list[str]) -> dict[str, bool]:
    """Thin adapter from a SARIF result file to {function_id: flagged}.

    A function is flagged when any result names it in a logical location or
    mentions its symbol in the result message. Mapping relies on symbol
    names surviving in the analyzer output; review before trusting it on a
    new analyzer.
    """
    mentioned: set[str] = set()
    for run in sarif.get("runs", []):
        for result in run.get("results", []):
            for loc in result.get("locations", []):
                for logical in loc.get("logicalLocations", []):
                    name = logical.get("fullyQualifiedName") or logical.get("name")
                    if name:
                        mentioned.add(name)
            text = result.get("message", {}).get("text", "")
            for fid in function_ids:
                if fid and fid in text:
                    mentioned.add(fid)
    return {fid: fid in mentioned for fid in function_ids}


# -- report emission -----------------------------------------------------------


def emit_report(
    run_id: str,
    manifest_digest: str,
    reports: dict[str, SplitReport],
    curves: list[ScalingCurve],
    fmt: str,
    extras: Optional[dict] = None,
) -> str:
    """Render one deterministic report document in json, csv, or markdown."""
    policies = sorted(reports)
    if fmt == "json":
        doc = {
            "run_id": run_id,
            "manifest_digest": manifest_digest,
            "policies": {
                p: {
                    "acc": _r1(reports[p].acc),
                    "bm": _r1(reports[p].bm),
                    "edit": _r1(reports[p].edit),
                    "comp": _r1(reports[p].comp),
                    "n_tasks": reports[p].n_tasks,
                }
                for p in policies
            },
            "curves": [c.to_json() for c in curves],
        }
        if extras:
            doc.update(extras)
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["policy", *METRIC_COLUMNS, "n_tasks", "manifest_digest"])
        for p in policies:
            rep = reports[p]
            writer.writerow(
                [p, rep.cell("acc"), rep.cell("bm"), rep.cell("edit"), rep.cell("comp"),
                 rep.n_tasks, manifest_digest]
            )
        return buf.getvalue()
    if fmt == "markdown":
        lines = [
            f"# Run {run_id}",
            "",
            f"manifest digest: `{manifest_digest}`",
            "",
            "| Policy | Acc | BM | Edit | Comp |",
            "|---|---|---|---|---|",
        ]
        for p in policies:
            rep = reports[p]
            lines.append(
                f"| {p} | {rep.cell('acc')} | {rep.cell('bm')} | "
                f"{rep.cell('edit')} | {rep.cell('comp')} |"
            )
        for curve in curves:
            lines += ["", f"## {curve.metric_id} vs k ({curve.estimator})", ""]
            lines.append("| k | value |")
            lines.append("|---|---|")
            for k, v in zip(curve.k_values, curve.values):
                lines.append(f"| {k} | {v:.4f} |")
        return "\n".join(lines) + "\n"
    raise ContractError(f"unknown report format {fmt!r}")


def _r1(value: Optional[float]) -> Optional[float]:
    return None if value is None else round(value, 1)
