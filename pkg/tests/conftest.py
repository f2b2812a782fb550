"""Shared fixtures: the working-example C functions and task builders."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from decaf.corpus import DecompilationTask, TestCase
from decaf.sandbox import Limits
from decaf.toolchain import builtin_profiles

# The original function: writes a factorization of `size` into arr[0..1].
REFERENCE_SRC = """\
void createDimensions(int* arr, int size){
  int x = 1, y;
  while(1){
    if(x == size){
      y = 1; break;
    }
    y = size / x;
    if(x >= y){
      if(x * y == size) break;
    }
    x++;
  }
  arr[0] = x; arr[1] = y;
}
"""

# Behaviorally identical reconstruction (diverges only in naming/typing).
GOOD_CANDIDATE_SRC = """\
typedef struct image_t { int cols; int rows; } image_t;
static void get_shape(image_t *self, int area)
{
  if (area == 1) {
    self->cols = 1; self->rows = 1; return;
  }

  int cols, rows = 1; cols = area / rows;
  while (!(cols <= rows && rows * cols == area))
  {
    rows++; cols = area / rows;
  }
  self->cols = rows; self->rows = cols;
}
"""

# Plausible but wrong: breaks as soon as i*i exceeds the input, so size=8
# yields {3,2} instead of {4,2}. size=6 coincidentally agrees.
BAD_CANDIDATE_SRC = """\
typedef struct Image { int width; int height; } Image;
void get_image_size(Image *image, int number_of_pixels) {
  int i;

  for (i = 1; i < number_of_pixels; ++i) {
    if (i * i > number_of_pixels) {
      break;
    }
  }

  image->width = i;
  image->height = number_of_pixels / i;
}
"""

DECOMPILER_OUTPUT = """\
void FUN_00101140(int *param_1,int param_2)
{
  int iVar1, iVar2 = 1;
  if (param_2 != 1) {
    do {
      iVar1 = param_2 / iVar2;
      if ((iVar1 <= iVar2) && (iVar1 * iVar2 == param_2)) goto LAB_0010116e;
      iVar2 = iVar2 + 1;
    } while (param_2 != iVar2);
  }
  iVar1 = 1;
LAB_0010116e:
  *param_1 = iVar2;
  param_1[1] = iVar1;
  return;
}
"""

CALLS_EXTERNAL_SRC = """\
extern int helper(int);
int wrapper(int v){ return helper(v) + 1; }
"""


def size_test(size: int) -> TestCase:
    return TestCase(
        test_id=f"size{size}",
        driver_inputs={
            "args": [
                {"ctype": "int", "buffer_length": 2, "capture": True},
                {"ctype": "int", "value": size},
            ]
        },
    )


def make_task(task_id="fig1", sizes=(6, 8), **overrides) -> DecompilationTask:
    fields = dict(
        task_id=task_id,
        decompiler_output=DECOMPILER_OUTPUT,
        symbol="createDimensions",
        reference_source=REFERENCE_SRC,
        tests=tuple(size_test(s) for s in sizes),
    )
    fields.update(overrides)
    return DecompilationTask(**fields)


def write_tasks(path: Path, tasks) -> Path:
    path.write_text(
        "".join(json.dumps(t.to_json(), sort_keys=True) + "\n" for t in tasks), "utf-8"
    )
    return path


def write_replay(path: Path, task_id: str, sources, logprobs=None) -> Path:
    lines = []
    for i, src in enumerate(sources):
        obj = {"candidate_id": f"{task_id}#{i}", "source": src,
               "token_logprobs": (logprobs or {}).get(i, [])}
        lines.append(json.dumps(obj, sort_keys=True))
    path.write_text("\n".join(lines) + "\n", "utf-8")
    return path


def write_scores(path: Path, task_id: str, scores) -> Path:
    lines = [
        json.dumps({"task_id": task_id, "candidate_id": f"{task_id}#{i}", "score": s})
        for i, s in enumerate(scores)
    ]
    path.write_text("\n".join(lines) + "\n", "utf-8")
    return path


@pytest.fixture(scope="session")
def profile():
    return builtin_profiles()["gcc-O0"]


@pytest.fixture(scope="session")
def limits():
    return Limits(cpu_seconds=5, memory_bytes=512 * 1024 * 1024)


@pytest.fixture
def fig1_task():
    return make_task()


@pytest.fixture(scope="session")
def compiled_trio(tmp_path_factory, profile):
    """Reference, good, and bad artifacts compiled once per session."""
    from decaf.toolchain import compile_candidate

    base = tmp_path_factory.mktemp("trio")
    arts = {}
    for name, src in [
        ("ref", REFERENCE_SRC),
        ("good", GOOD_CANDIDATE_SRC),
        ("bad", BAD_CANDIDATE_SRC),
    ]:
        arts[name] = compile_candidate(src, "", profile, base / name, name)
        assert arts[name].success, arts[name].compiler_log
    return arts
