"""Task ingestion and run persistence.

Tasks arrive as line-delimited JSON (one task per line; a directory of
``*.jsonl`` files is read in sorted filename order). Runs live under
``runs/<run_id>/`` with a ``manifest.json`` and a content-addressed cache of
execution records, so compile/execute work is never repeated.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

from .errors import ParseError, PersistenceError, ValidationError
from .listings import ByteListing

# Label that marks a task as not executable for correctness (e.g. function
# calls that cannot be linked back after stripping).
EXECUTION_EXEMPT_LABEL = "execution_exempt"
_TRUTHY = {"1", "true", "yes"}
_TASK_ID_RE = re.compile(r"[A-Za-z0-9._-]+")


@dataclass(frozen=True)
class TestCase:
    """One driver invocation: a portable value tree plus optional expectation."""

    __test__ = False  # domain type, not a pytest class

    test_id: str
    driver_inputs: dict
    expected: Optional["ExecutionRecord"] = None

    def to_json(self) -> dict:
        obj = {"test_id": self.test_id, "driver_inputs": self.driver_inputs}
        if self.expected is not None:
            obj["expected"] = self.expected.to_json()
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "TestCase":
        from .sandbox import ExecutionRecord

        expected = obj.get("expected")
        return cls(
            test_id=obj["test_id"],
            driver_inputs=obj.get("driver_inputs", {}),
            expected=ExecutionRecord.from_json(expected) if expected else None,
        )


@dataclass(frozen=True)
class DecompilationTask:
    """One target function to decompile, with everything needed to judge it."""

    task_id: str
    decompiler_output: str
    symbol: str
    reference_source: str = ""
    dependencies: str = ""
    stripped: bool = False
    compiler_profile_id: str = ""
    tests: tuple[TestCase, ...] = ()
    reference_bytes: Optional[ByteListing] = None
    labels: dict[str, str] = field(default_factory=dict)

    @property
    def execution_exempt(self) -> bool:
        return self.labels.get(EXECUTION_EXEMPT_LABEL, "").lower() in _TRUTHY

    def validate(self) -> None:
        if not self.task_id:
            raise ValidationError("task_id must be nonempty")
        if not _TASK_ID_RE.fullmatch(self.task_id):
            raise ValidationError(
                f"task_id {self.task_id!r} must match [A-Za-z0-9._-]+ (it names files)"
            )
        if not self.decompiler_output:
            raise ValidationError(f"task {self.task_id}: decompiler_output must be nonempty")
        if not self.tests and not self.execution_exempt:
            raise ValidationError(
                f"task {self.task_id}: no tests and no {EXECUTION_EXEMPT_LABEL!r} label"
            )
        seen = set()
        for t in self.tests:
            if t.test_id in seen:
                raise ValidationError(f"task {self.task_id}: duplicate test_id {t.test_id!r}")
            seen.add(t.test_id)

    def to_json(self) -> dict:
        obj = {
            "task_id": self.task_id,
            "decompiler_output": self.decompiler_output,
            "symbol": self.symbol,
            "reference_source": self.reference_source,
            "dependencies": self.dependencies,
            "stripped": self.stripped,
            "compiler_profile_id": self.compiler_profile_id,
            "tests": [t.to_json() for t in self.tests],
            "labels": dict(self.labels),
        }
        if self.reference_bytes is not None:
            obj["reference_bytes"] = self.reference_bytes.to_json()
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "DecompilationTask":
        ref_bytes = obj.get("reference_bytes")
        return cls(
            task_id=obj.get("task_id", ""),
            decompiler_output=obj.get("decompiler_output", ""),
            symbol=obj.get("symbol", ""),
            reference_source=obj.get("reference_source", ""),
            dependencies=obj.get("dependencies", ""),
            stripped=bool(obj.get("stripped", False)),
            compiler_profile_id=obj.get("compiler_profile_id", ""),
            tests=tuple(TestCase.from_json(t) for t in obj.get("tests", [])),
            reference_bytes=ByteListing.from_json(ref_bytes) if ref_bytes else None,
            labels=dict(obj.get("labels", {})),
        )


@dataclass(frozen=True)
class TaskSet:
    tasks: tuple[DecompilationTask, ...]
    digest: str  # sha256 over the source file bytes

    def __iter__(self) -> Iterator[DecompilationTask]:
        return iter(self.tasks)

    def __len__(self) -> int:
        return len(self.tasks)

    def get(self, task_id: str) -> DecompilationTask:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise KeyError(task_id)


def _task_files(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix in (".jsonl", ".json"))
        if not files:
            raise ParseError("no .jsonl task files in directory", path=str(path))
        return files
    if path.is_file():
        return [path]
    raise ParseError("no such file or directory", path=str(path))


def load_tasks(path: str | os.PathLike) -> TaskSet:
    """Load and validate all tasks under ``path``, sorted by task_id.

    Pure function of the file bytes: identical bytes produce an identical
    TaskSet (and digest).
    """
    files = _task_files(Path(path))
    digest = hashlib.sha256()
    tasks: list[DecompilationTask] = []
    seen: dict[str, str] = {}
    for f in files:
        raw = f.read_bytes()
        digest.update(raw)
        for lineno, line in enumerate(raw.decode("utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON: {e.msg}", path=str(f), line=lineno) from e
            if not isinstance(obj, dict):
                raise ParseError("task record must be a JSON object", path=str(f), line=lineno)
            try:
                task = DecompilationTask.from_json(obj)
                task.validate()
            except (ValidationError, KeyError, TypeError) as e:
                raise ParseError(f"bad task record: {e}", path=str(f), line=lineno) from e
            if task.task_id in seen:
                raise ValidationError(
                    f"duplicate task_id {task.task_id!r} ({seen[task.task_id]} and {f}:{lineno})"
                )
            seen[task.task_id] = f"{f}:{lineno}"
            tasks.append(task)
    tasks.sort(key=lambda t: t.task_id)
    return TaskSet(tasks=tuple(tasks), digest=digest.hexdigest())


def record_cache_key(source: str, profile_id: str, test_ids: list[str]) -> str:
    """Content hash identifying one (source, profile, test suite) execution."""
    h = hashlib.sha256()
    h.update(source.encode("utf-8"))
    h.update(b"\x00")
    h.update(profile_id.encode("utf-8"))
    for tid in test_ids:
        h.update(b"\x00")
        h.update(tid.encode("utf-8"))
    return h.hexdigest()


class RunStore:
    """Directory-backed store for one run: manifest, cache, phase outputs."""

    def __init__(self, root: str | os.PathLike, run_id: str):
        self.run_id = run_id
        self.root = Path(root) / run_id
        self.cache_dir = self.root / "cache"
        self.reports_dir = self.root / "reports"
        self.scratch_dir = self.root / "scratch"

    def create(self) -> None:
        for d in (self.root, self.cache_dir, self.reports_dir, self.scratch_dir):
            d.mkdir(parents=True, exist_ok=True)

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    def write_manifest(self, manifest: dict) -> None:
        """Write the manifest once; an existing manifest is never rewritten."""
        if self.manifest_path.exists():
            return
        self.create()
        self._atomic_write(self.manifest_path, _stable_json(manifest).encode("utf-8"))

    def read_manifest(self) -> dict:
        try:
            return json.loads(self.manifest_path.read_text("utf-8"))
        except FileNotFoundError:
            raise PersistenceError(f"run {self.run_id}: no manifest at {self.manifest_path}")

    def manifest_digest(self) -> str:
        return hashlib.sha256(self.manifest_path.read_bytes()).hexdigest()

    # -- execution-record cache -------------------------------------------

    def cache_put(self, key: str, record) -> None:
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        try:
            self._atomic_write(
                self.cache_dir / f"{key}.json",
                _stable_json(record.to_json()).encode("utf-8"),
            )
        except OSError as e:
            raise PersistenceError(f"cache write failed for {key}: {e}") from e

    def cache_get(self, key: str):
        from .sandbox import ExecutionRecord

        path = self.cache_dir / f"{key}.json"
        try:
            raw = path.read_text("utf-8")
        except FileNotFoundError:
            return None
        except OSError as e:
            raise PersistenceError(f"cache read failed for {key}: {e}") from e
        return ExecutionRecord.from_json(json.loads(raw))

    # -- per-phase, per-task outputs --------------------------------------

    def phase_path(self, phase: str, task_id: str, suffix: str = ".json") -> Path:
        return self.root / phase / f"{task_id}{suffix}"

    def phase_done(self, phase: str, task_id: str, suffix: str = ".json") -> bool:
        return self.phase_path(phase, task_id, suffix).exists()

    def write_phase(self, phase: str, task_id: str, payload, suffix: str = ".json") -> None:
        path = self.phase_path(phase, task_id, suffix)
        path.parent.mkdir(parents=True, exist_ok=True)
        data = payload if isinstance(payload, bytes) else _stable_json(payload).encode("utf-8")
        self._atomic_write(path, data)

    def read_phase(self, phase: str, task_id: str, suffix: str = ".json"):
        path = self.phase_path(phase, task_id, suffix)
        raw = path.read_bytes()
        return raw if suffix != ".json" else json.loads(raw.decode("utf-8"))

    def write_report(self, name: str, text: str) -> Path:
        self.reports_dir.mkdir(parents=True, exist_ok=True)
        path = self.reports_dir / name
        self._atomic_write(path, text.encode("utf-8"))
        return path

    @staticmethod
    def _atomic_write(path: Path, data: bytes) -> None:
        # Unique temp name + rename keeps concurrent writers last-write-wins.
        tmp = path.with_name(f".{path.name}.{os.getpid()}.{id(data):x}.tmp")
        try:
            tmp.write_bytes(data)
            os.replace(tmp, path)
        except OSError as e:
            raise PersistenceError(f"write failed for {path}: {e}") from e


def _stable_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=False) + "\n"
