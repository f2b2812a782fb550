"""Execute linked test binaries under resource limits and judge equivalence.

The generated driver speaks a line protocol on stdout: ``TEST <id>`` opens a
test, ``OUT <len>:<hex>`` serializes one captured value (out-parameter
buffers, return values, driver-declared globals), and ``EXIT <code>`` closes
the test. Anything else the program prints lands between those markers and is
compared bit-exactly, so two runs are equivalent only when every observable
byte agrees. Floating-point values are captured as raw bit patterns via the
hex dump, never formatted.

Containment here is resource limits plus a scrubbed environment; run the
whole harness inside a container for isolation guarantees (see README).
"""

from __future__ import annotations

import base64
import os
import resource
import subprocess
import time
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigurationError, ContractError

DEFAULT_CPU_SECONDS = 10
DEFAULT_MEMORY_BYTES = 512 * 1024 * 1024


@dataclass(frozen=True)
class Limits:
    cpu_seconds: int = DEFAULT_CPU_SECONDS
    memory_bytes: int = DEFAULT_MEMORY_BYTES


@dataclass(frozen=True)
class ExecutionRecord:
    """Observed behavior of one driver process covering a task's test suite."""

    stdout: bytes
    exit_code: int
    side_effects: dict[str, str] = field(default_factory=dict)
    timed_out: bool = False
    wall_time: float = 0.0

    def to_json(self) -> dict:
        return {
            "stdout_b64": base64.b64encode(self.stdout).decode("ascii"),
            "exit_code": self.exit_code,
            "side_effects": dict(sorted(self.side_effects.items())),
            "timed_out": self.timed_out,
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ExecutionRecord":
        return cls(
            stdout=base64.b64decode(obj["stdout_b64"]),
            exit_code=obj["exit_code"],
            side_effects=dict(obj.get("side_effects", {})),
            timed_out=obj.get("timed_out", False),
            wall_time=obj.get("wall_time", 0.0),
        )


@dataclass(frozen=True)
class Verdict:
    """Outcome of comparing a candidate run against the reference run."""

    kind: str  # equivalent | inequivalent | failed | exempt
    first_diverging_test: str = ""
    reason: str = ""

    EQUIVALENT = "equivalent"
    INEQUIVALENT = "inequivalent"
    FAILED = "failed"
    EXEMPT = "exempt"

    @classmethod
    def equivalent(cls) -> "Verdict":
        return cls(cls.EQUIVALENT)

    @classmethod
    def inequivalent(cls, first_diverging_test: str) -> "Verdict":
        return cls(cls.INEQUIVALENT, first_diverging_test=first_diverging_test)

    @classmethod
    def failed(cls, reason: str) -> "Verdict":
        return cls(cls.FAILED, reason=reason)

    @classmethod
    def exempt(cls, reason: str = "") -> "Verdict":
        return cls(cls.EXEMPT, reason=reason)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "first_diverging_test": self.first_diverging_test,
            "reason": self.reason,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Verdict":
        return cls(obj["kind"], obj.get("first_diverging_test", ""), obj.get("reason", ""))


def run_tests(executable, tests, limits: Limits = Limits(), stdin_payload: bytes = b"") -> ExecutionRecord:
    """Run a linked driver executable and capture its observable behavior.

    The driver runs every test itself; stdin payloads of all tests are
    concatenated in test order unless ``stdin_payload`` overrides them.
    Resource-limit breaches become markers on the record, not exceptions.
    """
    executable = os.fspath(executable)
    if not os.path.exists(executable):
        raise ConfigurationError(f"executable not found: {executable}")
    if not stdin_payload:
        # Drivers execute tests in test_id order; stdin must follow suit.
        parts = [t.driver_inputs.get("stdin", "") for t in sorted(tests, key=lambda t: t.test_id)]
        stdin_payload = "".join(parts).encode("utf-8")

    def set_limits():
        resource.setrlimit(resource.RLIMIT_CPU, (limits.cpu_seconds, limits.cpu_seconds + 1))
        resource.setrlimit(resource.RLIMIT_AS, (limits.memory_bytes, limits.memory_bytes))
        resource.setrlimit(resource.RLIMIT_CORE, (0, 0))

    env = {"LC_ALL": "C", "PATH": "/usr/bin:/bin"}
    start = time.monotonic()
    timed_out = False
    try:
        proc = subprocess.run(
            [executable],
            input=stdin_payload,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            preexec_fn=set_limits,
            env=env,
            cwd=os.path.dirname(executable) or ".",
            timeout=limits.cpu_seconds + 5,  # wall clock backstop for sleepers
        )
        stdout, exit_code = proc.stdout, proc.returncode
    except subprocess.TimeoutExpired as e:
        stdout = e.stdout or b""
        exit_code = -1
        timed_out = True
    except OSError as e:
        raise ConfigurationError(f"failed to spawn {executable}: {e}") from e
    wall = time.monotonic() - start
    # A CPU-limit kill surfaces as SIGKILL/SIGXCPU.
    if exit_code < 0 and not timed_out:
        import signal

        if -exit_code in (signal.SIGXCPU, signal.SIGKILL):
            timed_out = True
    side_effects, complete = _parse_protocol(stdout, [t.test_id for t in tests])
    if not complete and not timed_out and exit_code == 0:
        exit_code = 1  # driver died before finishing the protocol
    return ExecutionRecord(
        stdout=stdout,
        exit_code=exit_code,
        side_effects=side_effects,
        timed_out=timed_out,
        wall_time=wall,
    )


def _parse_protocol(stdout: bytes, test_ids: list[str]) -> tuple[dict[str, str], bool]:
    """Collect per-test captured values; report whether every test closed."""
    side_effects: dict[str, str] = {}
    closed: set[str] = set()
    current: Optional[str] = None
    captures: list[str] = []
    for line in stdout.decode("utf-8", errors="replace").splitlines():
        if line.startswith("TEST "):
            current = line[5:].strip()
            captures = []
        elif line.startswith("OUT ") and current is not None:
            captures.append(line[4:].strip())
        elif line.startswith("EXIT ") and current is not None:
            code = line[5:].strip()
            side_effects[current] = ";".join(captures) + f";exit={code}"
            closed.add(current)
            current = None
    return side_effects, all(t in closed for t in test_ids)


def _stdout_segments(stdout: bytes) -> dict[str, bytes]:
    """Split a driver stdout stream into per-test byte segments."""
    segments: dict[str, bytes] = {}
    current: Optional[str] = None
    buf: list[bytes] = []
    for line in stdout.split(b"\n"):
        if line.startswith(b"TEST "):
            current = line[5:].strip().decode("utf-8", errors="replace")
            buf = []
        elif line.startswith(b"EXIT ") and current is not None:
            segments[current] = b"\n".join(buf)
            current = None
        elif current is not None:
            buf.append(line)
    return segments


def determinism_filter(run1: ExecutionRecord, run2: ExecutionRecord) -> bool:
    """True iff two runs of the same executable observed identical behavior.

    A false result marks the program nondeterministic (clock-seeded
    randomness, address leaks, ...) and excludes it from correctness scoring.
    """
    return (
        run1.stdout == run2.stdout
        and run1.exit_code == run2.exit_code
        and run1.side_effects == run2.side_effects
    )


def judge_equivalence(reference: ExecutionRecord, candidate: ExecutionRecord) -> Verdict:
    """Compare candidate behavior against the reference, bit-exactly.

    Equivalent only when every test's stdout segment and serialized
    side-effects match and both processes exited identically. Divergence
    names the first differing test in test_id order; process-level divergence
    outside any test reports the pseudo-test ``<process>``.
    """
    if candidate.timed_out:
        return Verdict.failed("timed out")
    if reference.timed_out:
        return Verdict.failed("reference run timed out")
    ref_ids = set(reference.side_effects)
    cand_ids = set(candidate.side_effects)
    if candidate.exit_code != 0 and not (cand_ids >= ref_ids):
        # Crashed before completing the suite: no complete observation.
        return Verdict.failed(f"exit code {candidate.exit_code}")
    if ref_ids != cand_ids:
        missing = sorted(ref_ids.symmetric_difference(cand_ids))
        raise ContractError(f"records cover different tests: {missing}")
    ref_seg = _stdout_segments(reference.stdout)
    cand_seg = _stdout_segments(candidate.stdout)
    for test_id in sorted(ref_ids):
        if reference.side_effects[test_id] != candidate.side_effects[test_id]:
            return Verdict.inequivalent(test_id)
        if ref_seg.get(test_id) != cand_seg.get(test_id):
            return Verdict.inequivalent(test_id)
    if candidate.exit_code != reference.exit_code:
        if candidate.exit_code != 0:
            return Verdict.failed(f"exit code {candidate.exit_code}")
        return Verdict.inequivalent("<process>")
    if reference.stdout != candidate.stdout:
        return Verdict.inequivalent("<process>")
    return Verdict.equivalent()
