"""End-to-end run orchestration over the run store.

Phases: generate -> compile -> execute -> rerank -> report. Every phase
writes one output file per task and skips tasks whose output already exists,
so a killed run resumes from the last completed per-task checkpoint and a
finished run re-emits byte-identical reports. All randomness flows from the
manifest seed (the harness itself introduces none), so a replay-backed run
is reproducible end to end.
"""

from __future__ import annotations

import concurrent.futures
import datetime
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import analysis, rerank, sandbox, toolchain
from .corpus import DecompilationTask, RunStore, TaskSet, load_tasks, record_cache_key
from .errors import ContractError, DecafError, PolicyUnavailableError, ValidationError
from .generation import Candidate, GeneratorConfig, load_candidates, make_generator, replay_store
from .listings import ByteListing, DisassemblyListing
from .metrics import exact_match, source_edit_distance, wildcard_levenshtein
from .sandbox import ExecutionRecord, Limits, Verdict

log = logging.getLogger(__name__)

PHASES = ("generate", "compile", "execute", "rerank", "report")
DEFAULT_POLICIES = ("logprob", "bytedist")
REPORT_FORMATS = ("json", "csv", "markdown")


@dataclass
class RunConfig:
    tasks_path: str
    run_root: str = "runs"
    run_id: str = ""  # derived from content when empty
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    profiles: dict[str, toolchain.CompilerProfile] = field(
        default_factory=toolchain.builtin_profiles
    )
    default_profile_id: str = "gcc-O0"
    policies: tuple[str, ...] = DEFAULT_POLICIES
    seed: int = 0
    jobs: int = 4
    replay_candidates: Optional[str] = None
    replay_scores: Optional[str] = None
    scorer_endpoint: Optional[str] = None
    limits: Limits = field(default_factory=Limits)
    include_prefix_best: bool = False

    def __post_init__(self):
        for p in self.policies:
            if p not in rerank.POLICIES:
                raise ValidationError(f"unknown policy {p!r}; choose from {rerank.POLICIES}")
        if self.default_profile_id not in self.profiles:
            raise ValidationError(f"unknown profile {self.default_profile_id!r}")
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1")


class Pipeline:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.tasks: TaskSet = load_tasks(cfg.tasks_path)
        run_id = cfg.run_id or self._derive_run_id()
        self.store = RunStore(cfg.run_root, run_id)
        self.store.create()
        self.store.write_manifest(self._manifest(run_id))

    # -- manifest ----------------------------------------------------------

    def _derive_run_id(self) -> str:
        h = hashlib.sha256()
        h.update(self.tasks.digest.encode())
        h.update(json.dumps(self.cfg.generator.to_json(), sort_keys=True).encode())
        h.update(",".join(self.cfg.policies).encode())
        h.update(str(self.cfg.seed).encode())
        h.update(self.cfg.default_profile_id.encode())
        return f"run-{h.hexdigest()[:16]}"

    def _manifest(self, run_id: str) -> dict:
        return {
            "run_id": run_id,
            "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "task_set_digest": self.tasks.digest,
            "generator_config": self.cfg.generator.to_json(),
            "compiler_profiles": [
                p.to_json() for _, p in sorted(self.cfg.profiles.items())
            ],
            "default_profile_id": self.cfg.default_profile_id,
            "policy_ids": list(self.cfg.policies),
            "seed": self.cfg.seed,
        }

    def _profile(self, task: DecompilationTask) -> toolchain.CompilerProfile:
        pid = task.compiler_profile_id or self.cfg.default_profile_id
        if pid not in self.cfg.profiles:
            raise ValidationError(f"task {task.task_id}: unknown profile {pid!r}")
        return self.cfg.profiles[pid]

    def _map_tasks(self, phase: str, worker) -> dict[str, str]:
        """Run ``worker(task)`` for each unfinished task; record failures."""
        pending = [t for t in self.tasks if not self.store.phase_done(phase, t.task_id)]
        failures: dict[str, str] = {}
        if not pending:
            return failures
        with concurrent.futures.ThreadPoolExecutor(max_workers=self.cfg.jobs) as pool:
            futures = {pool.submit(worker, t): t for t in pending}
            for fut in concurrent.futures.as_completed(futures):
                task = futures[fut]
                try:
                    fut.result()
                except Exception as e:
                    log.error("phase %s: task %s failed: %s", phase, task.task_id, e)
                    failures[task.task_id] = str(e)
        return failures

    # -- generate ----------------------------------------------------------

    def phase_generate(self) -> dict:
        generator = make_generator(self.cfg.generator, self.cfg.replay_candidates)

        def worker(task: DecompilationTask) -> None:
            candidates = generator.sample(task, self.cfg.generator)
            path = self.store.phase_path("candidates", task.task_id, ".jsonl")
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".jsonl.tmp")
            if candidates:
                replay_store(tmp, candidates)
            else:
                tmp.write_text("", "utf-8")
            tmp.replace(path)

        failures = self._map_tasks("candidates", worker)
        return {"phase": "generate", "tasks": len(self.tasks), "failures": failures}

    def _candidates(self, task: DecompilationTask) -> list[Candidate]:
        path = self.store.phase_path("candidates", task.task_id, ".jsonl")
        if not path.exists():
            raise ContractError(f"task {task.task_id}: generate phase has not run")
        if path.stat().st_size == 0:
            return []
        return load_candidates(path)

    # -- compile -----------------------------------------------------------

    def phase_compile(self) -> dict:
        def worker(task: DecompilationTask) -> None:
            self.store.write_phase("compile", task.task_id, self._compile_task(task))

        failures = self._map_tasks("compile", worker)
        return {"phase": "compile", "tasks": len(self.tasks), "failures": failures}

    def _compile_task(self, task: DecompilationTask) -> dict:
        profile = self._profile(task)
        scratch = self.store.scratch_dir / task.task_id
        ref_listing, ref_disasm, ref_error = self._reference_views(task, profile, scratch)
        out = {
            "reference": {
                "listing": ref_listing.to_json() if ref_listing else None,
                "disassembly": ref_disasm.to_json() if ref_disasm else None,
                "error": ref_error,
            },
            "candidates": [],
        }
        for cand in self._candidates(task):
            workdir = scratch / f"c{cand.sample_index}"
            art = toolchain.compile_candidate(
                cand.source, task.dependencies, profile, workdir
            )
            entry = {
                "candidate_id": cand.candidate_id,
                "success": art.success,
                "log_excerpt": art.compiler_log[-2000:],
                "object_path": art.object_path,
                "resolved_symbol": "",
                "listing": None,
                "canonical": None,
                "exact_match": False,
                "byte_distance": None,
                "source_distance": None,
            }
            if task.reference_source:
                entry["source_distance"] = source_edit_distance(
                    cand.source, task.reference_source
                ).normalized
            if art.success:
                try:
                    sym = toolchain.resolve_function_symbol(art.object_path, task.symbol)
                    listing = toolchain.extract_function_bytes(art, sym.name)
                    disasm = toolchain.disassemble(art, sym.name)
                    entry["resolved_symbol"] = sym.name
                    entry["listing"] = listing.to_json()
                    entry["canonical"] = disasm.canonical
                    if ref_listing is not None:
                        entry["exact_match"] = exact_match(listing, ref_listing)
                        entry["byte_distance"] = wildcard_levenshtein(
                            listing, ref_listing
                        ).normalized
                except DecafError as e:
                    entry["log_excerpt"] += f"\nextraction failed: {e}"
            out["candidates"].append(entry)
        return out

    def _reference_views(self, task, profile, scratch):
        """Reference byte listing + canonical disassembly, built or shipped."""
        if task.reference_bytes is not None:
            listing = task.reference_bytes
            try:
                disasm = toolchain.disassemble_bytes(listing)
            except DecafError as e:
                return listing, None, f"reference disassembly failed: {e}"
            return listing, disasm, None
        if not task.reference_source:
            return None, None, "task ships neither reference bytes nor reference source"
        art = toolchain.compile_candidate(
            task.reference_source, task.dependencies, profile, scratch / "reference", "reference"
        )
        if not art.success:
            return None, None, f"reference failed to compile: {art.compiler_log[-500:]}"
        try:
            sym = toolchain.resolve_function_symbol(art.object_path, task.symbol)
            listing = toolchain.extract_function_bytes(art, sym.name)
            disasm = toolchain.disassemble(art, sym.name)
        except DecafError as e:
            return None, None, f"reference extraction failed: {e}"
        return listing, disasm, None

    # -- execute -----------------------------------------------------------

    def phase_execute(self) -> dict:
        def worker(task: DecompilationTask) -> None:
            self.store.write_phase("execute", task.task_id, self._execute_task(task))

        failures = self._map_tasks("execute", worker)
        return {"phase": "execute", "tasks": len(self.tasks), "failures": failures}

    def _execute_task(self, task: DecompilationTask) -> dict:
        out = {
            "exempt": False,
            "exempt_reason": "",
            "nondeterministic": False,
            "verdicts": {},
        }
        compile_out = self.store.read_phase("compile", task.task_id)
        candidates = self._candidates(task)
        if task.execution_exempt:
            out["exempt"] = True
            out["exempt_reason"] = "task labeled execution-exempt"
            out["verdicts"] = {
                c.candidate_id: Verdict.exempt("execution-exempt").to_json() for c in candidates
            }
            return out
        profile = self._profile(task)
        reference = self._reference_record(task, profile)
        if reference is None:
            out["exempt"] = True
            out["exempt_reason"] = "reference is nondeterministic or unrunnable"
            out["nondeterministic"] = True
            out["verdicts"] = {
                c.candidate_id: Verdict.exempt(out["exempt_reason"]).to_json()
                for c in candidates
            }
            return out
        by_id = {e["candidate_id"]: e for e in compile_out["candidates"]}
        for cand in candidates:
            entry = by_id.get(cand.candidate_id, {})
            if not entry.get("success"):
                verdict = Verdict.failed("compilation failed")
            else:
                verdict = self._candidate_verdict(task, profile, cand, reference)
            out["verdicts"][cand.candidate_id] = verdict.to_json()
        return out

    def _reference_record(self, task, profile) -> Optional[ExecutionRecord]:
        if task.tests and all(t.expected is not None for t in task.tests):
            return _merge_expected(task)
        key = record_cache_key(
            "<reference>" + task.reference_source,
            profile.profile_id,
            sorted(t.test_id for t in task.tests),
        )
        cached = self.store.cache_get(key)
        if cached is not None:
            return cached
        if not task.reference_source:
            return None
        scratch = self.store.scratch_dir / task.task_id / "reference_exec"
        art = toolchain.compile_candidate(
            task.reference_source, task.dependencies, profile, scratch, "reference"
        )
        if not art.success:
            return None
        linked = toolchain.link_with_harness(art, task, profile)
        if not linked.success:
            return None
        run1 = sandbox.run_tests(linked.executable_path, list(task.tests), self.cfg.limits)
        run2 = sandbox.run_tests(linked.executable_path, list(task.tests), self.cfg.limits)
        if not sandbox.determinism_filter(run1, run2):
            log.warning("task %s: reference behavior is nondeterministic", task.task_id)
            return None
        self.store.cache_put(key, run1)
        return run1

    def _candidate_verdict(self, task, profile, cand: Candidate, reference) -> Verdict:
        key = record_cache_key(
            cand.source, profile.profile_id, sorted(t.test_id for t in task.tests)
        )
        record = self.store.cache_get(key)
        if record is None:
            workdir = self.store.scratch_dir / task.task_id / f"c{cand.sample_index}"
            obj = workdir / "candidate.o"
            art = toolchain.CompilationArtifact(
                object_path=str(obj), executable_path=None, compiler_log="",
                profile_id=profile.profile_id, success=obj.exists(),
            )
            if not art.success:  # scratch was cleaned; rebuild
                art = toolchain.compile_candidate(
                    cand.source, task.dependencies, profile, workdir
                )
                if not art.success:
                    return Verdict.failed("compilation failed")
            linked = toolchain.link_with_harness(art, task, profile)
            if not linked.success:
                return Verdict.failed("link failed")
            record = sandbox.run_tests(
                linked.executable_path, list(task.tests), self.cfg.limits
            )
            self.store.cache_put(key, record)
        try:
            return sandbox.judge_equivalence(reference, record)
        except ContractError as e:
            return Verdict.failed(f"incomparable records: {e}")

    # -- rerank ------------------------------------------------------------

    def phase_rerank(self) -> dict:
        scorer = rerank.make_scorer(self.cfg.scorer_endpoint, self.cfg.replay_scores)

        def worker(task: DecompilationTask) -> None:
            self.store.write_phase("rankings", task.task_id, self._rerank_task(task, scorer))

        failures = self._map_tasks("rankings", worker)
        return {"phase": "rerank", "tasks": len(self.tasks), "failures": failures}

    def _rerank_task(self, task: DecompilationTask, scorer) -> dict:
        compile_out = self.store.read_phase("compile", task.task_id)
        execute_out = self.store.read_phase("execute", task.task_id)
        scored = _scored_candidates(self._candidates(task), compile_out, execute_out)
        ref = compile_out["reference"]
        ref_listing = ByteListing.from_json(ref["listing"]) if ref["listing"] else None
        ref_disasm = (
            DisassemblyListing.from_json(ref["disassembly"]) if ref["disassembly"] else None
        )
        out: dict = {}
        for policy in self.cfg.policies:
            try:
                out[policy] = self._apply_policy(
                    policy, scored, ref_listing, ref_disasm, scorer
                ).to_json()
            except (PolicyUnavailableError, ContractError) as e:
                out[policy] = {"error": str(e)}
        return out

    def _apply_policy(self, policy, scored, ref_listing, ref_disasm, scorer):
        if policy == "logprob":
            return rerank.logprob_rank(scored)
        if policy == "bytedist":
            if ref_listing is None:
                raise PolicyUnavailableError("no reference bytes for this task")
            return rerank.bytedist_rank(scored, ref_listing)
        if policy == "neural":
            if scorer is None:
                raise PolicyUnavailableError("no scorer endpoint or replay file")
            if ref_disasm is None:
                raise PolicyUnavailableError("no reference disassembly for this task")
            return rerank.neural_rank(scored, ref_disasm, scorer)
        if policy == "two_stage":
            if ref_listing is None:
                raise PolicyUnavailableError("no reference bytes for this task")
            return rerank.two_stage_rank(scored, ref_listing, ref_disasm, scorer)
        if policy == "oracle":
            if ref_listing is None:
                raise PolicyUnavailableError("no reference bytes for this task")
            return rerank.oracle_rank(scored, ref_listing)
        raise ContractError(f"unknown policy {policy!r}")

    # -- report ------------------------------------------------------------

    def phase_report(self, formats=REPORT_FORMATS) -> dict:
        results = [self._task_result(t) for t in self.tasks]
        reports: dict[str, analysis.SplitReport] = {}
        for policy in self.cfg.policies:
            covered = [r for r in results if policy in r.policies]
            if covered:
                reports[policy] = analysis.aggregate_split(covered, policy)
        max_k = self.cfg.generator.n_samples
        curves = analysis.scaling_curves(
            results, max_k, include_prefix_best=self.cfg.include_prefix_best
        )
        digest = self.store.manifest_digest()
        extras = {"dedup_rate": self._dedup_rate()}
        files = {}
        ext = {"json": "json", "csv": "csv", "markdown": "md"}
        for fmt in formats:
            text = analysis.emit_report(
                self.store.run_id, digest, reports, curves, fmt, extras=extras
            )
            files[fmt] = str(self.store.write_report(f"report.{ext[fmt]}", text))
        return {"phase": "report", "files": files}

    def _dedup_rate(self) -> float:
        total = unique = 0
        for task in self.tasks:
            seen = set()
            for cand in self._candidates(task):
                total += 1
                seen.add(cand.source)
            unique += len(seen)
        return round(1.0 - unique / total, 4) if total else 0.0

    def _task_result(self, task: DecompilationTask) -> analysis.TaskResult:
        compile_out = self.store.read_phase("compile", task.task_id)
        execute_out = self.store.read_phase("execute", task.task_id)
        rankings = self.store.read_phase("rankings", task.task_id)
        verdicts = {
            cid: Verdict.from_json(v) for cid, v in execute_out["verdicts"].items()
        }
        by_id = {e["candidate_id"]: e for e in compile_out["candidates"]}
        rows = []
        for entry in compile_out["candidates"]:
            cid = entry["candidate_id"]
            verdict = verdicts.get(cid)
            rows.append(
                analysis.CandidateRow(
                    candidate_id=cid,
                    compiled=entry["success"],
                    equivalent=(
                        None
                        if verdict is None or verdict.kind == Verdict.EXEMPT
                        else verdict.kind == Verdict.EQUIVALENT
                    ),
                    exact_match=entry["exact_match"],
                    source_distance=entry["source_distance"],
                )
            )
        policies = {}
        for policy, sel in rankings.items():
            if "error" in sel:
                continue
            cid = sel["selected"]
            entry = by_id.get(cid, {})
            verdict = verdicts.get(cid)
            policies[policy] = analysis.PolicyOutcome(
                selected=cid,
                compiled=bool(entry.get("success")),
                verdict_kind=verdict.kind if verdict else Verdict.EXEMPT,
                exact_match=bool(entry.get("exact_match")),
                byte_distance=entry.get("byte_distance"),
                source_distance=entry.get("source_distance"),
            )
        return analysis.TaskResult(
            task_id=task.task_id,
            exempt=execute_out["exempt"],
            policies=policies,
            candidates=tuple(rows),
        )

    # -- whole run ---------------------------------------------------------

    def run_all(self, formats=REPORT_FORMATS) -> dict:
        summary = {"run_id": self.store.run_id, "phases": []}
        for phase_fn in (self.phase_generate, self.phase_compile,
                         self.phase_execute, self.phase_rerank):
            summary["phases"].append(phase_fn())
        summary["phases"].append(self.phase_report(formats))
        failures = {}
        for ph in summary["phases"]:
            failures.update(ph.get("failures", {}))
        summary["failed_tasks"] = failures
        return summary

    def status(self) -> dict:
        phases = {}
        dirs = {"generate": ("candidates", ".jsonl"), "compile": ("compile", ".json"),
                "execute": ("execute", ".json"), "rerank": ("rankings", ".json")}
        for phase, (dirname, suffix) in dirs.items():
            done = sum(
                self.store.phase_done(dirname, t.task_id, suffix) for t in self.tasks
            )
            phases[phase] = {"done": done, "total": len(self.tasks)}
        phases["report"] = {
            "done": int((self.store.reports_dir / "report.json").exists()),
            "total": 1,
        }
        return {"run_id": self.store.run_id, "phases": phases}


def _merge_expected(task: DecompilationTask) -> ExecutionRecord:
    """Synthesize a reference record from per-test expected records."""
    tests = sorted(task.tests, key=lambda t: t.test_id)
    stdout = b"".join(t.expected.stdout for t in tests)
    side_effects: dict[str, str] = {}
    for t in tests:
        side_effects.update(t.expected.side_effects)
    return ExecutionRecord(
        stdout=stdout,
        exit_code=0,
        side_effects=side_effects,
        timed_out=False,
        wall_time=0.0,
    )


def _scored_candidates(candidates, compile_out, execute_out) -> list[rerank.ScoredCandidate]:
    by_id = {e["candidate_id"]: e for e in compile_out["candidates"]}
    verdicts = execute_out["verdicts"]
    scored = []
    for cand in candidates:
        entry = by_id.get(cand.candidate_id)
        if entry is None:
            continue
        status = "compiled" if entry["success"] else "compile_failed"
        listing = ByteListing.from_json(entry["listing"]) if entry["listing"] else None
        disasm = (
            DisassemblyListing(raw="", canonical=entry["canonical"])
            if entry["canonical"] is not None
            else None
        )
        verdict = (
            Verdict.from_json(verdicts[cand.candidate_id])
            if cand.candidate_id in verdicts
            else None
        )
        scored.append(
            rerank.ScoredCandidate(
                candidate=cand.with_status(status),
                listing=listing,
                disassembly=disasm,
                verdict=verdict,
            )
        )
    return scored
