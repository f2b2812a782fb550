"""Generate a C test driver from a task's portable test-input trees.

Each test's ``driver_inputs`` describes the call as data:

    {"args": [{"ctype": "int", "buffer": [0, 0], "capture": true},
              {"ctype": "int", "value": 8}],
     "returns": {"ctype": "int", "capture": true},     # optional, else void
     "globals": [{"name": "g", "ctype": "int", "set": 1, "capture": true}],
     "stdin": "..."}                                   # optional

Scalars are emitted as literals (floats as C99 hex-floats, so values
round-trip bit-exactly), buffers as stack arrays passed by pointer, and
strings as mutable char arrays. Captured values are dumped post-call as
length-prefixed hex via the OUT protocol line. One pointer level is
supported; nested pointer graphs are out of scope for the driver.
"""

from __future__ import annotations

from .corpus import TestCase
from .errors import ValidationError

_INT_TYPES = {
    "char", "signed char", "unsigned char",
    "short", "unsigned short",
    "int", "unsigned", "unsigned int",
    "long", "unsigned long", "long long", "unsigned long long",
    "size_t", "int8_t", "uint8_t", "int16_t", "uint16_t",
    "int32_t", "uint32_t", "int64_t", "uint64_t",
}
_FLOAT_TYPES = {"float", "double"}


def _scalar_literal(ctype: str, value) -> str:
    if ctype in _FLOAT_TYPES:
        return float(value).hex()
    if ctype not in _INT_TYPES:
        raise ValidationError(f"unsupported scalar ctype {ctype!r}")
    v = int(value)
    suffix = "LL" if not -(2**31) <= v < 2**31 else ""
    return f"{v}{suffix}"


def _arg_decl(arg: dict, name: str) -> tuple[str, str, str]:
    """Return (declaration line, call expression, parameter type)."""
    ctype = arg.get("ctype", "int")
    if "cstring" in arg:
        text = arg["cstring"].replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")
        return f'char {name}[] = "{text}";', name, "char *"
    if "buffer" in arg or "buffer_length" in arg:
        if "buffer" in arg:
            values = arg["buffer"]
            init = ", ".join(_scalar_literal(ctype, v) for v in values)
            return f"{ctype} {name}[{len(values)}] = {{{init}}};", name, f"{ctype} *"
        n = int(arg["buffer_length"])
        return f"{ctype} {name}[{n}] = {{0}};", name, f"{ctype} *"
    if "value" in arg:
        return f"{ctype} {name} = {_scalar_literal(ctype, arg['value'])};", name, ctype
    raise ValidationError(f"argument needs one of value/buffer/buffer_length/cstring: {arg}")


def _signature(driver_inputs: dict) -> tuple[str, list[str]]:
    """(return ctype, parameter ctypes) implied by one test's value tree."""
    params = []
    for i, arg in enumerate(driver_inputs.get("args", [])):
        _, _, ptype = _arg_decl(arg, f"a{i}")
        params.append(ptype)
    ret = driver_inputs.get("returns")
    return (ret.get("ctype", "int") if ret else "void"), params


def generate_driver(symbol: str, tests: list[TestCase]) -> str:
    """Emit a complete driver translation unit calling ``symbol`` per test."""
    if not tests:
        raise ValidationError("cannot generate a driver without tests")
    ret_type, params = _signature(tests[0].driver_inputs)
    for t in tests[1:]:
        if _signature(t.driver_inputs) != (ret_type, params):
            raise ValidationError(
                f"test {t.test_id!r} implies a different signature than {tests[0].test_id!r}"
            )
    param_list = ", ".join(params) if params else "void"

    lines = [
        "/* generated test driver */",
        "#include <stdio.h>",
        "#include <string.h>",
        "#include <stdint.h>",
        "#include <stddef.h>",
        "",
        f"extern {ret_type} {symbol}({param_list});",
    ]
    globals_decl = {}
    for t in tests:
        for g in t.driver_inputs.get("globals", []):
            globals_decl[g["name"]] = g.get("ctype", "int")
    for name, ctype in sorted(globals_decl.items()):
        lines.append(f"extern {ctype} {name};")
    lines += [
        "",
        "static void __dcf_dump(const void *p, unsigned long n) {",
        "    const unsigned char *b = (const unsigned char *)p;",
        "    unsigned long i;",
        '    printf("OUT %lu:", n);',
        '    for (i = 0; i < n; i++) printf("%02x", b[i]);',
        '    printf("\\n");',
        "}",
        "",
        "int main(void) {",
    ]
    for t in sorted(tests, key=lambda t: t.test_id):
        lines += _emit_test(symbol, ret_type, t)
    lines += ["    return 0;", "}", ""]
    return "\n".join(lines)


def _emit_test(symbol: str, ret_type: str, test: TestCase) -> list[str]:
    di = test.driver_inputs
    body = [
        f'    printf("TEST {test.test_id}\\n");',
        "    fflush(stdout);",
        "    {",
    ]
    call_args = []
    dumps = []
    for i, arg in enumerate(di.get("args", [])):
        decl, expr, _ = _arg_decl(arg, f"a{i}")
        body.append(f"        {decl}")
        call_args.append(expr)
        if arg.get("capture"):
            dumps.append(f"        __dcf_dump({expr}, sizeof({expr}));")
    for g in di.get("globals", []):
        if "set" in g:
            body.append(
                f"        {g['name']} = {_scalar_literal(g.get('ctype', 'int'), g['set'])};"
            )
    call = f"{symbol}({', '.join(call_args)})"
    ret = di.get("returns")
    if ret and ret_type != "void":
        body.append(f"        {ret_type} __r = {call};")
        if ret.get("capture", True):
            dumps.insert(0, "        __dcf_dump(&__r, sizeof(__r));")
    else:
        body.append(f"        {call};")
    body += dumps
    for g in di.get("globals", []):
        if g.get("capture"):
            body.append(f"        __dcf_dump(&{g['name']}, sizeof({g['name']}));")
    body += [
        "    }",
        '    printf("EXIT 0\\n");',
        "    fflush(stdout);",
    ]
    return body
