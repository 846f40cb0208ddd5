"""Domain types for problems, solutions, and grading.

A solution is an ordered list of single-line steps. Math-style solutions end
in a ``#### <answer>`` marker line (which itself counts as a step, so the
answer is visible to the last step's scorer); code-style solutions are graded
by executing the joined step lines against test cases.
"""

from __future__ import annotations

import re
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .errors import GradingError, InvalidInputError, ParseError
from .util import frac_from_str, frac_to_str

ANSWER_MARKER = "####"
SPLITS = ("train", "verify_train", "test")

_MARKER_RE = re.compile(r"^####\s*(.+)$")


@dataclass(frozen=True, slots=True)
class Step:
    """One line of a solution. ``index`` is 1-based and matches position."""

    index: int
    text: str

    def __post_init__(self):
        if "\n" in self.text or "\r" in self.text:
            raise InvalidInputError(f"step {self.index} contains a line terminator")
        if self.index < 1:
            raise InvalidInputError(f"step index must be >= 1, got {self.index}")


@dataclass
class GradingSpec:
    """How a problem is graded: exact numeric answer, or external test cases.

    Exactly one variant is populated. Numeric grading compares canonical
    rationals; test-case grading runs a configured command template once per
    case with the case input on stdin.
    """

    kind: str  # "numeric_answer" | "test_cases"
    reference: Fraction | None = None
    runner: str | None = None
    cases: list[tuple[str, str]] = field(default_factory=list)
    timeout: float | None = None

    @classmethod
    def numeric(cls, reference) -> "GradingSpec":
        ref = reference if isinstance(reference, Fraction) else canonicalize_answer(str(reference))
        if ref is None:
            raise InvalidInputError(f"reference answer does not parse as a rational: {reference!r}")
        return cls(kind="numeric_answer", reference=ref)

    @classmethod
    def tests(cls, runner: str, cases, timeout: float = 5.0) -> "GradingSpec":
        cases = [(str(i), str(o)) for i, o in cases]
        if not cases:
            raise InvalidInputError("test_cases grading requires at least one case")
        if timeout <= 0:
            raise InvalidInputError("timeout must be positive")
        return cls(kind="test_cases", runner=runner, cases=cases, timeout=timeout)

    def to_dict(self) -> dict:
        if self.kind == "numeric_answer":
            return {"kind": self.kind, "reference": frac_to_str(self.reference)}
        return {
            "kind": self.kind,
            "runner": self.runner,
            "cases": [list(c) for c in self.cases],
            "timeout": self.timeout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GradingSpec":
        if d["kind"] == "numeric_answer":
            return cls.numeric(Fraction(d["reference"]))
        return cls.tests(d["runner"], [tuple(c) for c in d["cases"]], d["timeout"])


@dataclass
class Problem:
    """A task with a statement and a grading specification."""

    id: str
    statement: str
    grading: GradingSpec
    split: str = "test"

    def __post_init__(self):
        if not self.id:
            raise InvalidInputError("problem id must be nonempty")
        if self.split not in SPLITS:
            raise InvalidInputError(f"unknown split {self.split!r}, expected one of {SPLITS}")


@dataclass
class Solution:
    """An ordered list of steps plus the extracted final answer.

    ``correct`` is None until :func:`grade` has been applied.
    """

    problem_id: str
    steps: list[Step]
    final_answer: Fraction | None = None
    correct: bool | None = None
    source: str = ""

    def __post_init__(self):
        if not self.steps:
            raise InvalidInputError("a solution must contain at least one step")
        for pos, step in enumerate(self.steps, start=1):
            if step.index != pos:
                raise InvalidInputError(
                    f"step indices must be 1..m contiguous; position {pos} has index {step.index}"
                )

    @property
    def texts(self) -> list[str]:
        return [s.text for s in self.steps]

    def text(self) -> str:
        return "\n".join(self.texts)


def canonicalize_answer(text: str) -> Fraction | None:
    """Parse an answer string into a canonical rational.

    Strips whitespace, thousands commas, and a leading dollar sign; accepts
    integers, finite decimals, and simple fractions ``a/b``. Returns None for
    anything unparsable (callers grade that as incorrect, never a crash).
    """
    if not text:
        raise InvalidInputError("answer text must be nonempty")
    cleaned = "".join(text.split()).replace(",", "")
    if cleaned.startswith("$"):
        cleaned = cleaned[1:]
    if not cleaned:
        return None
    try:
        return Fraction(cleaned)
    except (ValueError, ZeroDivisionError):
        return None


def parse_solution(text: str, fmt: str, problem_id: str = "", source: str = "") -> Solution:
    """Split raw multi-line text into steps, one per nonblank line.

    ``fmt`` is ``math_lines`` (final ``#### <answer>`` marker line sets the
    answer and is retained as the last step) or ``code_lines`` (no answer; the
    program is graded by execution). A math solution without a marker is not
    an error, it simply has no final answer.
    """
    if fmt not in ("math_lines", "code_lines"):
        raise InvalidInputError(f"unknown solution format {fmt!r}")
    if not text.rstrip():
        raise ParseError("solution text is empty after trimming")
    lines = [line for line in text.splitlines() if line.strip()]
    steps = [Step(index=i, text=line) for i, line in enumerate(lines, start=1)]
    final_answer = None
    if fmt == "math_lines":
        m = _MARKER_RE.match(lines[-1].strip())
        if m:
            final_answer = canonicalize_answer(m.group(1))
    return Solution(problem_id=problem_id, steps=steps, final_answer=final_answer, source=source)


def grade_answer(final_answer: Fraction | None, grading: GradingSpec) -> bool:
    """Exact-rational comparison for numeric grading. Missing answer is wrong."""
    if grading.kind != "numeric_answer":
        raise InvalidInputError("grade_answer only applies to numeric_answer specs")
    return final_answer is not None and final_answer == grading.reference


def run_test_cases(program_text: str, grading: GradingSpec) -> dict:
    """Run every test case of a test_cases spec against ``program_text``.

    Returns a report dict: ``{"passed": bool, "cases": [status, ...]}`` where
    status is one of pass/fail/timeout. A missing runner binary raises
    :class:`GradingError`; a per-case timeout just fails that case.
    """
    if grading.kind != "test_cases":
        raise InvalidInputError("run_test_cases only applies to test_cases specs")
    statuses = []
    with tempfile.TemporaryDirectory(prefix="prmlab-grade-") as tmp:
        program_path = Path(tmp) / "program"
        program_path.write_text(program_text + "\n", encoding="utf-8")
        argv = [a.replace("{program}", str(program_path)) for a in shlex.split(grading.runner)]
        for case_input, expected in grading.cases:
            try:
                proc = subprocess.run(
                    argv,
                    input=case_input.encode("utf-8"),
                    capture_output=True,
                    timeout=grading.timeout,
                    cwd=tmp,
                )
            except subprocess.TimeoutExpired:
                statuses.append("timeout")
                continue
            except (FileNotFoundError, PermissionError) as exc:
                raise GradingError(f"test runner could not be started: {exc}") from exc
            ok = proc.returncode == 0 and proc.stdout.decode("utf-8", "replace").strip() == expected.strip()
            statuses.append("pass" if ok else "fail")
    return {"passed": all(s == "pass" for s in statuses), "cases": statuses}


def grade_with_report(solution: Solution, problem: Problem) -> tuple[bool, dict]:
    """Grade a solution and return (correct, per-case report)."""
    if solution.problem_id != problem.id:
        raise InvalidInputError(
            f"solution is for problem {solution.problem_id!r}, not {problem.id!r}"
        )
    if problem.grading.kind == "numeric_answer":
        ok = grade_answer(solution.final_answer, problem.grading)
        report = {"passed": ok, "cases": []}
    else:
        report = run_test_cases(solution.text(), problem.grading)
        ok = report["passed"]
    solution.correct = ok
    return ok, report


def grade(solution: Solution, problem: Problem) -> bool:
    """Grade a solution against its problem and set ``solution.correct``."""
    ok, _ = grade_with_report(solution, problem)
    return ok


# ---------------------------------------------------------------------------
# JSON Lines persistence
# ---------------------------------------------------------------------------


def problem_to_dict(problem: Problem) -> dict:
    return {
        "id": problem.id,
        "statement": problem.statement,
        "grading": problem.grading.to_dict(),
        "split": problem.split,
    }


def problem_from_dict(d: dict) -> Problem:
    return Problem(
        id=d["id"],
        statement=d["statement"],
        grading=GradingSpec.from_dict(d["grading"]),
        split=d["split"],
    )


def solution_to_dict(solution: Solution) -> dict:
    return {
        "problem_id": solution.problem_id,
        "steps": solution.texts,
        "final_answer": frac_to_str(solution.final_answer),
        "correct": solution.correct,
        "source": solution.source,
    }


def solution_from_dict(d: dict) -> Solution:
    return Solution(
        problem_id=d["problem_id"],
        steps=[Step(index=i, text=t) for i, t in enumerate(d["steps"], start=1)],
        final_answer=frac_from_str(d["final_answer"]),
        correct=d["correct"],
        source=d["source"],
    )


def save_problems(path, problems: list[Problem]) -> None:
    from .util import write_jsonl

    ids = [p.id for p in problems]
    if len(set(ids)) != len(ids):
        raise InvalidInputError("problem ids must be unique within a dataset")
    write_jsonl(path, (problem_to_dict(p) for p in problems))


def load_problems(path) -> list[Problem]:
    from .util import read_jsonl

    return [problem_from_dict(d) for d in read_jsonl(path)]


def save_solutions(path, solutions: list[Solution]) -> None:
    from .util import write_jsonl

    write_jsonl(path, (solution_to_dict(s) for s in solutions))


def load_solutions(path) -> list[Solution]:
    from .util import read_jsonl

    return [solution_from_dict(d) for d in read_jsonl(path)]
