import subprocess

import pytest

from decaf.errors import (
    ConfigurationError,
    ExecutionExempt,
    ExtractionError,
    ValidationError,
)
from decaf.toolchain import (
    CompilerProfile,
    builtin_profiles,
    canonicalize,
    compile_candidate,
    disassemble,
    disassemble_bytes,
    extract_function_bytes,
    link_with_harness,
    load_profiles,
    resolve_function_symbol,
)
from conftest import (
    BAD_CANDIDATE_SRC,
    CALLS_EXTERNAL_SRC,
    GOOD_CANDIDATE_SRC,
    REFERENCE_SRC,
    make_task,
)
from oracles import objdump_relocation_spans


class TestCompilerProfile:
    def test_render_is_an_argument_vector(self, profile):
        argv = profile.compile_argv(["/tmp/x.c"], "/tmp/x.o")
        assert argv[0].endswith("gcc")
        assert "/tmp/x.c" in argv and "/tmp/x.o" in argv
        assert "-O0" in argv

    def test_template_must_mention_src_and_out(self):
        with pytest.raises(ValidationError):
            CompilerProfile(profile_id="p", compile_command_template="gcc -c {flags}")

    def test_timeout_must_be_positive(self):
        with pytest.raises(ValidationError):
            CompilerProfile(profile_id="p", timeout=0)

    def test_load_profiles_json(self, tmp_path):
        path = tmp_path / "profiles.json"
        path.write_text(
            '{"profiles": [{"profile_id": "clang-O2", '
            '"compile_command_template": "clang -c {flags} {src} -o {out}", '
            '"flags": ["-O2"]}]}',
            "utf-8",
        )
        profs = load_profiles(path)
        assert profs["clang-O2"].flags == ("-O2",)

    def test_load_profiles_toml(self, tmp_path):
        path = tmp_path / "profiles.toml"
        path.write_text(
            '[[profiles]]\nprofile_id = "gcc-Os"\nflags = ["-Os"]\n', "utf-8"
        )
        assert load_profiles(path)["gcc-Os"].flags == ("-Os",)


class TestCompileCandidate:
    def test_wellformed_source_compiles(self, profile, tmp_path):
        art = compile_candidate("int f(void){return 1;}", "", profile, tmp_path)
        assert art.success
        assert art.profile_id == profile.profile_id

    def test_syntax_error_reported_not_raised(self, profile, tmp_path):
        art = compile_candidate("int f(void){return }", "", profile, tmp_path)
        assert not art.success
        assert "error" in art.compiler_log

    def test_dependencies_supply_missing_declarations(self, profile, tmp_path):
        source = "int area(struct rect r){ return r.w * r.h; }"
        bare = compile_candidate(source, "", profile, tmp_path / "bare")
        assert not bare.success
        deps = "struct rect { int w; int h; };"
        art = compile_candidate(source, deps, profile, tmp_path / "with_deps")
        assert art.success

    def test_missing_compiler_is_configuration_error(self, tmp_path):
        prof = CompilerProfile(
            profile_id="ghost",
            compile_command_template="definitely-not-a-compiler -c {flags} {src} -o {out}",
        )
        with pytest.raises(ConfigurationError):
            compile_candidate("int f;", "", prof, tmp_path)

    def test_timeout_marks_failure(self, tmp_path):
        slow = tmp_path / "slowcc"
        slow.write_text("#!/bin/sh\nsleep 5\n", "utf-8")
        slow.chmod(0o755)
        prof = CompilerProfile(
            profile_id="slow",
            compile_command_template=f"{slow} -c {{flags}} {{src}} -o {{out}}",
            timeout=0.2,
        )
        art = compile_candidate("int f;", "", prof, tmp_path / "work")
        assert not art.success
        assert "timeout" in art.compiler_log

    def test_input_source_never_mutated(self, profile, tmp_path):
        src_file = tmp_path / "orig.c"
        src_file.write_text(REFERENCE_SRC, "utf-8")
        before = src_file.read_bytes()
        compile_candidate(REFERENCE_SRC, "", profile, tmp_path / "scratch")
        assert src_file.read_bytes() == before


class TestExtractFunctionBytes:
    def test_leaf_function_has_empty_mask(self, compiled_trio):
        listing = extract_function_bytes(compiled_trio["ref"], "createDimensions")
        assert len(listing.bytes) > 20
        assert not any(listing.wildcard_mask)

    def test_one_call_fixture_mask_matches_objdump(self, profile, tmp_path):
        art = compile_candidate(CALLS_EXTERNAL_SRC, "", profile, tmp_path)
        sym = resolve_function_symbol(art.object_path, "wrapper")
        listing = extract_function_bytes(art, "wrapper")
        expected = objdump_relocation_spans(
            art.object_path, sym.value, sym.value + sym.size
        )
        assert expected > 0
        assert sum(listing.wildcard_mask) == expected
        # exactly one contiguous true-run for the single call displacement
        runs = 0
        prev = False
        for m in listing.wildcard_mask:
            if m and not prev:
                runs += 1
            prev = m
        assert runs == 1

    def test_identical_compilations_identical_listings(self, profile, tmp_path):
        a1 = compile_candidate(CALLS_EXTERNAL_SRC, "", profile, tmp_path / "one")
        a2 = compile_candidate(CALLS_EXTERNAL_SRC, "", profile, tmp_path / "two")
        l1 = extract_function_bytes(a1, "wrapper")
        l2 = extract_function_bytes(a2, "wrapper")
        assert l1.bytes == l2.bytes
        assert l1.wildcard_mask == l2.wildcard_mask

    def test_absent_symbol_lists_available(self, compiled_trio):
        with pytest.raises(ExtractionError, match="createDimensions"):
            extract_function_bytes(compiled_trio["ref"], "no_such_symbol")

    def test_zero_size_symbol_rejected(self, profile, tmp_path):
        src = '__asm__(".globl zs\\n.type zs, @function\\nzs:\\n");\nint pad(void){return 0;}\n'
        art = compile_candidate(src, "", profile, tmp_path)
        assert art.success
        with pytest.raises(ExtractionError, match="zero size"):
            extract_function_bytes(art, "zs")


class TestResolveSymbol:
    def test_prefers_exact_name(self, compiled_trio):
        sym = resolve_function_symbol(compiled_trio["ref"].object_path, "createDimensions")
        assert sym.name == "createDimensions"

    def test_single_function_fallback(self, compiled_trio):
        sym = resolve_function_symbol(compiled_trio["good"].object_path, "createDimensions")
        assert sym.name == "get_shape"

    def test_no_functions_is_extraction_error(self, profile, tmp_path):
        art = compile_candidate("int just_a_global = 7;", "", profile, tmp_path)
        with pytest.raises(ExtractionError):
            resolve_function_symbol(art.object_path, "f")


class TestLinkWithHarness:
    def test_link_produces_runnable_binary(self, compiled_trio, profile, fig1_task):
        linked = link_with_harness(compiled_trio["ref"], fig1_task, profile)
        assert linked.success
        assert linked.executable_path is not None
        assert linked.resolved_symbol == "createDimensions"

    def test_static_candidate_is_globalized(self, compiled_trio, profile, fig1_task):
        linked = link_with_harness(compiled_trio["good"], fig1_task, profile)
        assert linked.success
        assert linked.resolved_symbol == "get_shape"

    def test_undefined_external_records_link_error(self, profile, tmp_path, fig1_task):
        art = compile_candidate(CALLS_EXTERNAL_SRC, "", profile, tmp_path)
        task = make_task(
            "ext",
            tests=(make_task().tests[0],),
            symbol="wrapper",
        )
        linked = link_with_harness(art, task, profile)
        assert not linked.success
        assert "helper" in linked.compiler_log

    def test_exempt_task_refused(self, compiled_trio, profile):
        task = make_task("ex", tests=(), labels={"execution_exempt": "1"})
        with pytest.raises(ExecutionExempt):
            link_with_harness(compiled_trio["ref"], task, profile)


class TestDisassembly:
    def test_canonical_has_no_absolute_addresses(self, compiled_trio):
        dis = disassemble(compiled_trio["ref"], "createDimensions")
        for line in dis.canonical.splitlines():
            assert not line.split()[0].rstrip(":").startswith("0x")
            # operands reference labels, never bare hex addresses
            assert "  " not in line

    def test_canonicalize_idempotent(self, compiled_trio):
        dis = disassemble(compiled_trio["ref"], "createDimensions")
        assert canonicalize(dis.canonical) == dis.canonical

    def test_labels_in_first_appearance_order(self):
        listing = "\n".join(
            [
                " 1e4e9: cmp    $0x1,%esi",
                " 1e4ec: je     1e509 <f+0x29>",
                " 1e4f0: mov    %esi,%eax",
                " 1e4f2: cltd",
                " 1e507: jne    1e4f0 <f+0x10>",
                " 1e509: mov    $0x1,%ecx",
            ]
        )
        canon = canonicalize(listing)
        assert "je L0" in canon
        assert "jne L1" in canon
        lines = canon.splitlines()
        assert lines[lines.index("L1:") + 1] == "mov %esi,%eax"
        assert lines[lines.index("L0:") + 1] == "mov $0x1,%ecx"

    def test_bare_branch_target_gets_label(self):
        # stripped linked binaries print targets with no symbol annotation
        canon = canonicalize(" 1e4e0: jmp    1e4f0\n 1e4f0: ret\n")
        assert "jmp L0" in canon

    def test_relocation_marker_masks_call(self, profile, tmp_path):
        art = compile_candidate(CALLS_EXTERNAL_SRC, "", profile, tmp_path)
        dis = disassemble(art, "wrapper")
        assert "call <rel>" in dis.canonical

    def test_address_shift_invariance(self, profile, tmp_path):
        # same function as relocatable object and inside a linked executable
        src = CALLS_EXTERNAL_SRC + "int helper(int v){ return v * 3; }\n"
        art_obj = compile_candidate(src, "", profile, tmp_path / "obj")
        obj_dis = disassemble(art_obj, "wrapper")

        main_src = src + "int main(void){ return wrapper(1); }\n"
        workdir = tmp_path / "exe"
        workdir.mkdir()
        exe_src = workdir / "prog.c"
        exe_src.write_text(main_src, "utf-8")
        exe_path = workdir / "prog"
        argv = profile.link_argv([str(exe_src)], str(exe_path))
        subprocess.run(argv, check=True, capture_output=True)
        from decaf.toolchain import CompilationArtifact

        art_exe = CompilationArtifact(
            object_path=str(exe_path), executable_path=str(exe_path),
            compiler_log="", profile_id=profile.profile_id, success=True,
        )
        exe_dis = disassemble(art_exe, "wrapper")
        assert obj_dis.canonical == exe_dis.canonical

    def test_disassemble_bytes_round_trip(self, compiled_trio):
        listing = extract_function_bytes(compiled_trio["ref"], "createDimensions")
        dis = disassemble_bytes(listing)
        assert dis.stripped_view
        assert dis.canonical  # non-empty and address-free
        assert canonicalize(dis.canonical) == dis.canonical

    def test_same_source_same_canonical(self, compiled_trio, profile, tmp_path):
        art = compile_candidate(REFERENCE_SRC, "", profile, tmp_path)
        d1 = disassemble(compiled_trio["ref"], "createDimensions")
        d2 = disassemble(art, "createDimensions")
        assert d1.canonical == d2.canonical
