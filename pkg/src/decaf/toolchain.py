"""Drive external compilers and binutils.

Candidates are compiled to relocatable objects; byte metrics are computed on
object-file function bytes, where pending relocations still exist and define
the wildcard mask. Execution uses a linked binary: the candidate object plus
a generated driver. All tool invocations use argument vectors (no shell), a
scrubbed environment, a fixed locale, and a per-call timeout.

``DECAF_TOOLCHAIN_DIR`` prefixes tool lookup, so an alternative binutils or
compiler installation can be selected without editing profiles.
"""

from __future__ import annotations

import json
import logging
import os
import re
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import elf
from .errors import ConfigurationError, ExecutionExempt, ExtractionError, ValidationError
from .listings import ByteListing, DisassemblyListing
from .testdriver import generate_driver

log = logging.getLogger(__name__)

TOOLCHAIN_DIR_ENV = "DECAF_TOOLCHAIN_DIR"

# -fkeep-static-functions keeps candidates that declare the target function
# static from being discarded as unreferenced at -O2; it never alters the
# code of functions that survive anyway.
DEFAULT_PROFILES = {
    "gcc-O0": {
        "flags": ["-O0", "-fkeep-static-functions", "-w"],
    },
    "gcc-O2": {
        "flags": ["-O2", "-fkeep-static-functions", "-w"],
    },
}
_DEFAULT_COMPILE_TEMPLATE = "gcc -c {flags} {src} -o {out}"
_DEFAULT_LINK_TEMPLATE = "gcc {flags} {src} -o {out}"


@dataclass(frozen=True)
class CompilerProfile:
    profile_id: str
    compile_command_template: str = _DEFAULT_COMPILE_TEMPLATE
    flags: tuple[str, ...] = ()
    linker_command_template: str = _DEFAULT_LINK_TEMPLATE
    strip: bool = False
    timeout: float = 60.0

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValidationError(f"profile {self.profile_id}: timeout must be positive")
        for tpl in (self.compile_command_template, self.linker_command_template):
            if "{src}" not in tpl or "{out}" not in tpl:
                raise ValidationError(
                    f"profile {self.profile_id}: template needs {{src}} and {{out}}: {tpl!r}"
                )

    def compile_argv(self, sources: Sequence[str], out: str) -> list[str]:
        return _render(self.compile_command_template, sources, out, self.flags)

    def link_argv(self, sources: Sequence[str], out: str) -> list[str]:
        return _render(self.linker_command_template, sources, out, self.flags)

    def to_json(self) -> dict:
        return {
            "profile_id": self.profile_id,
            "compile_command_template": self.compile_command_template,
            "flags": list(self.flags),
            "linker_command_template": self.linker_command_template,
            "strip": self.strip,
            "timeout": self.timeout,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CompilerProfile":
        return cls(
            profile_id=obj["profile_id"],
            compile_command_template=obj.get(
                "compile_command_template", _DEFAULT_COMPILE_TEMPLATE
            ),
            flags=tuple(obj.get("flags", [])),
            linker_command_template=obj.get("linker_command_template", _DEFAULT_LINK_TEMPLATE),
            strip=bool(obj.get("strip", False)),
            timeout=float(obj.get("timeout", 60.0)),
        )


def builtin_profiles() -> dict[str, CompilerProfile]:
    return {
        pid: CompilerProfile(profile_id=pid, flags=tuple(spec["flags"]))
        for pid, spec in DEFAULT_PROFILES.items()
    }


def load_profiles(path: str | os.PathLike) -> dict[str, CompilerProfile]:
    """Read compiler profiles from a JSON or TOML config file."""
    p = Path(path)
    raw = p.read_bytes()
    if p.suffix == ".toml":
        try:
            import tomllib  # py311+
        except ImportError:
            import tomli as tomllib
        data = tomllib.loads(raw.decode("utf-8"))
    else:
        data = json.loads(raw.decode("utf-8"))
    entries = data["profiles"] if isinstance(data, dict) and "profiles" in data else data
    profiles = {}
    if isinstance(entries, dict):
        entries = [{"profile_id": pid, **spec} for pid, spec in entries.items()]
    for spec in entries:
        prof = CompilerProfile.from_json(spec)
        profiles[prof.profile_id] = prof
    return profiles


def _render(template: str, sources: Sequence[str], out: str, flags: Sequence[str]) -> list[str]:
    argv: list[str] = []
    for token in template.split():
        if token == "{src}":
            argv.extend(os.fspath(s) for s in sources)
        elif token == "{flags}":
            argv.extend(flags)
        else:
            argv.append(token.replace("{out}", os.fspath(out)))
    if not argv:
        raise ValidationError(f"empty command template: {template!r}")
    argv[0] = _resolve_tool(argv[0])
    return argv


def _resolve_tool(tool: str) -> str:
    prefix = os.environ.get(TOOLCHAIN_DIR_ENV)
    if prefix:
        candidate = Path(prefix) / tool
        if candidate.exists():
            return str(candidate)
    return tool


def _run_tool(argv: list[str], timeout: float, cwd=None) -> tuple[int, str]:
    env = {"LC_ALL": "C", "LANG": "C", "PATH": os.environ.get("PATH", "/usr/bin:/bin")}
    try:
        proc = subprocess.run(
            argv,
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            env=env,
            cwd=cwd,
            timeout=timeout,
        )
    except FileNotFoundError as e:
        raise ConfigurationError(f"tool not found: {argv[0]} ({e})") from e
    except subprocess.TimeoutExpired:
        return -1, f"timeout: {' '.join(argv)} exceeded {timeout}s"
    return proc.returncode, proc.stdout.decode("utf-8", errors="replace")


@dataclass(frozen=True)
class CompilationArtifact:
    object_path: str
    executable_path: Optional[str]
    compiler_log: str
    profile_id: str
    success: bool
    resolved_symbol: str = ""

    def to_json(self) -> dict:
        return {
            "object_path": self.object_path,
            "executable_path": self.executable_path,
            "compiler_log": self.compiler_log,
            "profile_id": self.profile_id,
            "success": self.success,
            "resolved_symbol": self.resolved_symbol,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CompilationArtifact":
        return cls(
            object_path=obj["object_path"],
            executable_path=obj.get("executable_path"),
            compiler_log=obj.get("compiler_log", ""),
            profile_id=obj.get("profile_id", ""),
            success=obj.get("success", False),
            resolved_symbol=obj.get("resolved_symbol", ""),
        )


def compile_candidate(
    source: str,
    dependencies: str,
    profile: CompilerProfile,
    workdir: str | os.PathLike,
    basename: str = "candidate",
) -> CompilationArtifact:
    """Compile dependencies + source into a relocatable object.

    Compiler failure (nonzero exit, timeout) is a candidate outcome recorded
    on the artifact; a missing compiler binary is a configuration error.
    """
    if not source:
        raise ValidationError("candidate source is empty")
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    src_path = workdir / f"{basename}.c"
    obj_path = workdir / f"{basename}.o"
    text = (dependencies + "\n" if dependencies else "") + source
    if not text.endswith("\n"):
        text += "\n"
    src_path.write_text(text, "utf-8")
    argv = profile.compile_argv([str(src_path)], str(obj_path))
    rc, out = _run_tool(argv, profile.timeout)
    success = rc == 0 and obj_path.exists()
    return CompilationArtifact(
        object_path=str(obj_path),
        executable_path=None,
        compiler_log=out,
        profile_id=profile.profile_id,
        success=success,
    )


def resolve_function_symbol(object_path: str, preferred: str = "") -> elf.Symbol:
    """Pick the target function symbol in a compiled object.

    Exact match on ``preferred`` wins; otherwise the sole defined function;
    otherwise the largest one (candidates name stripped functions freely, so
    the object's own symbol table is the source of truth).
    """
    funcs = [s for s in elf.ElfFile(object_path).defined_functions() if s.size > 0]
    if not funcs:
        raise ExtractionError(f"{object_path}: no defined function symbols")
    if preferred:
        for s in funcs:
            if s.name == preferred:
                return s
    if len(funcs) == 1:
        return funcs[0]
    return max(enumerate(funcs), key=lambda pair: (pair[1].size, pair[0]))[1]


def link_with_harness(artifact: CompilationArtifact, task, profile: CompilerProfile):
    """Link the candidate object with a generated driver into a test binary.

    Refuses execution-exempt tasks. Static target functions are globalized
    via objcopy so the driver can reference them across translation units.
    """
    if task.execution_exempt:
        raise ExecutionExempt(f"task {task.task_id} is execution-exempt")
    if not artifact.success:
        raise ValidationError("cannot link a failed compilation")
    workdir = Path(artifact.object_path).parent
    sym = resolve_function_symbol(artifact.object_path, task.symbol)
    driver_src = workdir / "driver.c"
    driver_obj = workdir / "driver.o"
    exe_path = workdir / "test_bin"
    driver_src.write_text(generate_driver(sym.name, list(task.tests)), "utf-8")

    logs = []
    rc, out = _run_tool(
        profile.compile_argv([str(driver_src)], str(driver_obj)), profile.timeout
    )
    logs.append(out)
    if rc != 0:
        return _link_failure(artifact, sym.name, logs)

    link_obj = artifact.object_path
    if sym.binding == elf.STB_LOCAL:
        globalized = workdir / "candidate_global.o"
        rc, out = _run_tool(
            [_resolve_tool("objcopy"), f"--globalize-symbol={sym.name}",
             artifact.object_path, str(globalized)],
            profile.timeout,
        )
        logs.append(out)
        if rc != 0:
            return _link_failure(artifact, sym.name, logs)
        link_obj = str(globalized)

    rc, out = _run_tool(
        profile.link_argv([link_obj, str(driver_obj)], str(exe_path)), profile.timeout
    )
    logs.append(out)
    success = rc == 0 and exe_path.exists()
    if success and profile.strip:
        rc, out = _run_tool([_resolve_tool("strip"), str(exe_path)], profile.timeout)
        logs.append(out)
        success = rc == 0
    return CompilationArtifact(
        object_path=artifact.object_path,
        executable_path=str(exe_path) if success else None,
        compiler_log=artifact.compiler_log + "".join(logs),
        profile_id=profile.profile_id,
        success=success,
        resolved_symbol=sym.name,
    )


def _link_failure(artifact: CompilationArtifact, symbol: str, logs: list[str]):
    return CompilationArtifact(
        object_path=artifact.object_path,
        executable_path=None,
        compiler_log=artifact.compiler_log + "".join(logs),
        profile_id=artifact.profile_id,
        success=False,
        resolved_symbol=symbol,
    )


def extract_function_bytes(artifact: CompilationArtifact, symbol: str) -> ByteListing:
    """Extract one function's machine code and its relocation wildcard mask.

    The mask marks every byte inside the function span covered by a pending
    relocation, with the span width taken from the relocation type's field
    width (4 bytes for 32-bit fields, 8 for 64-bit).
    """
    ef = elf.ElfFile(artifact.object_path)
    sym = ef.find_symbol(symbol)
    if sym is None or not sym.is_defined:
        available = sorted(s.name for s in ef.defined_functions())
        raise ExtractionError(
            f"symbol {symbol!r} not found in {artifact.object_path}; available: {available}"
        )
    if sym.size == 0:
        raise ExtractionError(f"symbol {symbol!r} has zero size")
    section = ef.section_of_symbol(sym)
    data = ef.section_data(section)
    start, end = sym.value, sym.value + sym.size
    body = data[start:end]
    mask = [False] * len(body)
    for rel in ef.relocations_for(section.name):
        if start <= rel.offset < end:
            if rel.rtype not in elf.RELOC_FIELD_WIDTHS:
                log.warning(
                    "unknown relocation type %d at %#x; assuming %d-byte field",
                    rel.rtype, rel.offset, elf.DEFAULT_RELOC_WIDTH,
                )
            for j in range(rel.field_width):
                pos = rel.offset - start + j
                if 0 <= pos < len(mask):
                    mask[pos] = True
    return ByteListing(
        bytes=bytes(body),
        wildcard_mask=tuple(mask),
        symbol=symbol,
        origin_profile=artifact.profile_id,
    )


# -- disassembly --------------------------------------------------------------

_INSN_RE = re.compile(r"^\s*([0-9a-f]+):\s*\t?((?:[0-9a-f]{2}[ \t])+)?\s*\t?(.*)$")
_BARE_BYTES_RE = re.compile(r"(?:[0-9a-f]{2}[ \t]*)+$")
_RELOC_MARK_RE = re.compile(r"^\s*([0-9a-f]+):\s+(R_[A-Z0-9_]+)\s+(.*)$")
_SYM_HEADER_RE = re.compile(r"^([0-9a-f]+)\s+<([^>]+)>:\s*$")
_ADDR_REF_RE = re.compile(r"\b([0-9a-f]+)\s+<[^>]*>")
_RIP_DISP_RE = re.compile(r"\b0x[0-9a-f]+\(%rip\)")
_IMM_RE = re.compile(r"\$0x[0-9a-f]+")
_BRANCH_BARE_RE = re.compile(r"^((?:bnd\s+)?(?:j[a-z]{1,4}|call[q]?|loop(?:n?e)?q?))\s+([0-9a-f]+)\s*$")


def _objdump(path: str, timeout: float = 60.0, binary_blob: bool = False) -> str:
    argv = [_resolve_tool("objdump")]
    if binary_blob:
        argv += ["-D", "-b", "binary", "-m", "i386:x86-64"]
    else:
        argv += ["-dr"]
    argv.append(path)
    rc, out = _run_tool(argv, timeout)
    if rc != 0:
        raise ConfigurationError(f"objdump failed on {path}: {out.strip()[:400]}")
    return out


def disassemble(artifact: CompilationArtifact, symbol: str) -> DisassemblyListing:
    """Disassemble one function of a compiled artifact and canonicalize it."""
    if not artifact.success:
        raise ValidationError("cannot disassemble a failed compilation")
    target = artifact.executable_path or artifact.object_path
    raw = _objdump(target)
    block = _extract_symbol_block(raw, symbol)
    if block is None:
        raise ExtractionError(f"symbol {symbol!r} not in disassembly of {target}")
    return DisassemblyListing(
        raw=block,
        canonical=canonicalize(block),
        symbol=symbol,
        stripped_view=False,
    )


def disassemble_bytes(listing: ByteListing) -> DisassemblyListing:
    """Disassemble a raw byte listing (e.g. reference bytes shipped with a
    task), using its wildcard mask to locate relocation-site immediates."""
    import tempfile

    with tempfile.NamedTemporaryFile(suffix=".bin", delete=False) as f:
        f.write(listing.bytes)
        path = f.name
    try:
        raw = _objdump(path, binary_blob=True)
    finally:
        os.unlink(path)
    reloc_offsets = {i for i, m in enumerate(listing.wildcard_mask) if m}
    return DisassemblyListing(
        raw=raw,
        canonical=canonicalize(raw, reloc_offsets=reloc_offsets),
        symbol=listing.symbol,
        stripped_view=True,
    )


def _extract_symbol_block(objdump_output: str, symbol: str) -> Optional[str]:
    lines = objdump_output.splitlines()
    block: list[str] = []
    inside = False
    for line in lines:
        header = _SYM_HEADER_RE.match(line)
        if header:
            if inside:
                break
            inside = header.group(2) == symbol
            if inside:
                block.append(line)
            continue
        if inside:
            if not line.strip():
                break
            block.append(line)
    return "\n".join(block) if block else None


def canonicalize(raw: str, reloc_offsets: Optional[set[int]] = None) -> str:
    """Rewrite disassembly into an address-free canonical form.

    In-function branch targets become ``L<k>`` labels in first-appearance
    order (label definitions are inserted before their instructions),
    address/byte columns are stripped, RIP-relative displacements and
    relocation-site immediates become ``<rel>``, and out-of-function address
    operands (link-resolved calls, data references) are masked the same way.
    Text with no recognizable instruction lines is returned unchanged, which
    makes the transform idempotent.
    """
    lines = raw.splitlines()
    insns: list[tuple[int, int, str]] = []  # (address, byte length or 0, text)
    reloc_offsets = set(reloc_offsets or ())
    for line in lines:
        reloc = _RELOC_MARK_RE.match(line)
        if reloc:
            reloc_offsets.add(int(reloc.group(1), 16))
            continue
        m = _INSN_RE.match(line)
        if not m:
            continue
        text = m.group(3).strip()
        if not text or _BARE_BYTES_RE.fullmatch(text):
            # byte continuation of a long instruction: extend the previous one
            if insns and m.group(2):
                addr, nbytes, prev_text = insns[-1]
                insns[-1] = (addr, nbytes + len(m.group(2).split()), prev_text)
            continue
        nbytes = len(m.group(2).split()) if m.group(2) else 0
        insns.append((int(m.group(1), 16), nbytes, text))
    if not insns:
        return raw

    # Instruction end offsets: from the byte column when present, else the
    # next instruction's address. The final end bounds the function span, so
    # a call resolving to the function that follows is not mislabeled local.
    ends: list[int] = []
    for idx, (addr, nbytes, _) in enumerate(insns):
        if nbytes:
            ends.append(addr + nbytes)
        elif idx + 1 < len(insns):
            ends.append(insns[idx + 1][0])
        else:
            ends.append(addr + 1)
    func_lo, func_hi = insns[0][0], ends[-1]

    def insn_end(idx: int) -> int:
        return ends[idx]

    labels: dict[int, str] = {}

    def label_for(addr: int) -> str:
        if addr not in labels:
            labels[addr] = f"L{len(labels)}"
        return labels[addr]

    rewritten: list[tuple[int, str]] = []
    for idx, (addr, _, text) in enumerate(insns):
        text = text.split(" #", 1)[0].split("\t#", 1)[0].rstrip()
        text = " ".join(text.split())
        has_reloc = any(addr <= off < insn_end(idx) for off in reloc_offsets)
        text = _RIP_DISP_RE.sub("<rel>(%rip)", text)

        ref = _ADDR_REF_RE.search(text)
        bare = _BRANCH_BARE_RE.match(text) if ref is None else None
        target = None
        span = None
        if ref:
            target, span = int(ref.group(1), 16), ref.span()
        elif bare:
            target, span = int(bare.group(2), 16), bare.span(2)
        if target is not None:
            if has_reloc or not (func_lo <= target < func_hi):
                repl = "<rel>"
            else:
                repl = label_for(target)
            text = text[: span[0]] + repl + text[span[1] :]
        elif has_reloc:
            text = _IMM_RE.sub("$<rel>", text, count=1)
        rewritten.append((addr, text))

    out: list[str] = []
    for addr, text in rewritten:
        if addr in labels:
            out.append(f"{labels[addr]}:")
        out.append(text)
    return "\n".join(out)
