"""Monte Carlo annotation of intermediate solution prefixes.

For every prefix of every pooled solution, a completer reasoner samples
``n_mc`` continuations; the fraction that grade correct becomes the prefix's
soft label. The final prefix (the whole solution) is labeled by direct
grading, not sampling. Hard labels binarize: 1 iff the soft label exceeds 0.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .core import (
    Problem,
    Solution,
    Step,
    grade,
    grade_answer,
    load_solutions,
    run_test_cases,
    save_solutions,
)
from .errors import CorpusMissError, GradingError, InvalidInputError, ProtocolError, TransportError
from .reasoners import Completion, Reasoner, ReasonerParams, completion_to_solution
from .util import derive_seed, dump_json, load_json, read_jsonl, stable_digest, write_jsonl


@dataclass(frozen=True)
class StepAnnotation:
    """Monte Carlo label for one solution prefix.

    ``prefix_len`` is 1-based; for the final prefix (the full solution)
    ``mc_total`` is 0 and the soft label is the graded correctness.
    """

    problem_id: str
    solution_index: int
    prefix_len: int
    mc_total: int
    mc_correct: int
    soft_label: float
    hard_label: int

    def __post_init__(self):
        if not 0 <= self.mc_correct <= max(self.mc_total, 0):
            raise InvalidInputError("mc_correct must lie in [0, mc_total]")
        if self.hard_label != (1 if self.soft_label > 0.0 else 0):
            raise InvalidInputError("hard_label must be 1 iff soft_label > 0")

    def to_dict(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "solution_index": self.solution_index,
            "prefix_len": self.prefix_len,
            "mc_total": self.mc_total,
            "mc_correct": self.mc_correct,
            "soft_label": self.soft_label,
            "hard_label": self.hard_label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StepAnnotation":
        return cls(**d)


@dataclass(frozen=True)
class AnnotationParams:
    """Generation and annotation settings recorded with every dataset."""

    n_g: int = 32
    t_g: float = 0.7
    n_mc: int = 32
    t_mc: float = 0.7
    stride: int = 1
    reasoner_g: str = "sim"
    reasoner_mc: str = "sim"

    def __post_init__(self):
        if self.n_g < 1 or self.n_mc < 1:
            raise InvalidInputError("n_g and n_mc must be positive")
        if self.stride < 1:
            raise InvalidInputError("stride must be positive")

    def to_dict(self) -> dict:
        return {
            "n_g": self.n_g,
            "t_g": self.t_g,
            "n_mc": self.n_mc,
            "t_mc": self.t_mc,
            "stride": self.stride,
            "reasoner_g": self.reasoner_g,
            "reasoner_mc": self.reasoner_mc,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotationParams":
        return cls(**d)


@dataclass
class AnnotationDataset:
    """Annotations plus the solution pool they label."""

    annotations: list[StepAnnotation]
    solutions: list[Solution]
    params: AnnotationParams
    provenance: str
    manifest: dict = field(default_factory=dict)

    def save(self, directory) -> None:
        directory = Path(directory)
        save_solutions(directory / "solutions.jsonl", self.solutions)
        write_jsonl(directory / "annotations.jsonl", (a.to_dict() for a in self.annotations))
        # wall time is run metadata, not data: keeping it out of the file
        # makes identically-seeded runs byte-identical
        stable_manifest = {k: v for k, v in self.manifest.items() if k != "wall_time_s"}
        dump_json(
            directory / "dataset.json",
            {
                "schema": "prmlab.dataset.v1",
                "params": self.params.to_dict(),
                "provenance": self.provenance,
                "manifest": stable_manifest,
            },
        )

    @classmethod
    def load(cls, directory) -> "AnnotationDataset":
        directory = Path(directory)
        meta = load_json(directory / "dataset.json")
        return cls(
            annotations=[StepAnnotation.from_dict(d) for d in read_jsonl(directory / "annotations.jsonl")],
            solutions=load_solutions(directory / "solutions.jsonl"),
            params=AnnotationParams.from_dict(meta["params"]),
            provenance=meta["provenance"],
            manifest=meta["manifest"],
        )


def group_by_problem(solutions: list[Solution]) -> dict[str, list[Solution]]:
    grouped: dict[str, list[Solution]] = {}
    for s in solutions:
        grouped.setdefault(s.problem_id, []).append(s)
    return grouped


def generate_pool(
    reasoner: Reasoner,
    problems: list[Problem],
    n_g: int,
    t_g: float,
    seed: int,
    tally: dict | None = None,
) -> list[Solution]:
    """Generate and grade ``n_g`` solutions per problem.

    Solutions that hit a grading infrastructure error are skipped and counted
    in ``tally['grading_errors']`` when a tally dict is supplied.
    """
    if n_g < 1:
        raise InvalidInputError("n_g must be at least 1")
    pool: list[Solution] = []
    for problem in problems:
        params = ReasonerParams(temperature=t_g, n=n_g, seed=derive_seed(seed, "gen", problem.id))
        try:
            completions = reasoner.complete(problem, [], params)
        except TransportError as exc:
            raise TransportError(f"generation failed for problem {problem.id}: {exc}") from exc
        for completion in completions:
            solution = completion_to_solution(problem, [], completion, source=reasoner.reasoner_id)
            try:
                grade(solution, problem)
            except GradingError:
                if tally is not None:
                    tally["grading_errors"] = tally.get("grading_errors", 0) + 1
                continue
            pool.append(solution)
    return pool


def _completion_correct(problem: Problem, prefix: list[Step], completion: Completion) -> bool:
    if problem.grading.kind == "numeric_answer":
        return grade_answer(completion.final_answer, problem.grading)
    program = "\n".join([s.text for s in prefix] + [s.text for s in completion.steps])
    return run_test_cases(program, problem.grading)["passed"]


def annotate_prefix(
    reasoner: Reasoner,
    problem: Problem,
    prefix: list[Step],
    n_mc: int,
    t_mc: float,
    seed: int,
) -> tuple[int, int]:
    """Sample ``n_mc`` completions of a prefix and grade each.

    Returns (number correct, number sampled). Grading infrastructure errors
    propagate; a timed-out test case just makes that completion incorrect.
    """
    params = ReasonerParams(
        temperature=t_mc, n=n_mc, seed=seed, max_steps=max(64, len(prefix) + 1)
    )
    completions = reasoner.complete(problem, prefix, params)
    correct = sum(1 for c in completions if _completion_correct(problem, prefix, c))
    return correct, n_mc


def prefix_lengths(m: int, stride: int) -> list[int]:
    """Annotated prefix lengths: 1, 1+stride, ... plus always the final m."""
    return sorted(set(range(1, m, stride)) | {m})


def annotate_solution(
    reasoner: Reasoner,
    problem: Problem,
    solution: Solution,
    solution_index: int,
    n_mc: int,
    t_mc: float,
    seed: int,
    stride: int = 1,
) -> list[StepAnnotation]:
    """Annotate every (strided) prefix of one graded solution.

    Per-prefix seeds derive from the dataset seed and the prefix key
    (problem, solution index, prefix length), so results do not depend on
    scheduling order and distinct solutions get independent samples even when
    their step texts coincide.
    """
    if solution.correct is None:
        raise InvalidInputError("solution must be graded before annotation")
    m = len(solution.steps)
    annotations = []
    for i in prefix_lengths(m, stride):
        if i == m:
            soft = 1.0 if solution.correct else 0.0
            mc_correct, mc_total = 0, 0
        else:
            prefix = solution.steps[:i]
            prefix_seed = derive_seed("mc", seed, problem.id, solution_index, i)
            mc_correct, mc_total = annotate_prefix(reasoner, problem, prefix, n_mc, t_mc, prefix_seed)
            soft = mc_correct / mc_total
        annotations.append(
            StepAnnotation(
                problem_id=problem.id,
                solution_index=solution_index,
                prefix_len=i,
                mc_total=mc_total,
                mc_correct=mc_correct,
                soft_label=soft,
                hard_label=1 if soft > 0.0 else 0,
            )
        )
    return annotations


def build_annotation_dataset(
    reasoner_g: Reasoner | None,
    reasoner_mc: Reasoner,
    problems: list[Problem],
    params: AnnotationParams,
    seed: int,
    pool: list[Solution] | None = None,
    parallelism: int = 1,
) -> AnnotationDataset:
    """Generate a solution pool (unless given one) and annotate every prefix.

    Solutions whose annotation hits a backend failure are dropped whole (never
    partially annotated) and tallied; the manifest then carries
    ``partial=True``.
    """
    if not problems:
        raise InvalidInputError("problems must be nonempty")
    started = time.perf_counter()
    tally: dict = {}
    if pool is None:
        if reasoner_g is None:
            raise InvalidInputError("either a pool or a generation reasoner is required")
        pool = generate_pool(reasoner_g, problems, params.n_g, params.t_g, derive_seed(seed, "pool"), tally)
    by_problem = {p.id: p for p in problems}
    grouped = group_by_problem(pool)

    tasks = []
    for pid in sorted(grouped):
        problem = by_problem.get(pid)
        if problem is None:
            raise InvalidInputError(f"pool references unknown problem {pid!r}")
        for idx, solution in enumerate(grouped[pid]):
            tasks.append((problem, solution, idx))

    failed = 0

    def run(task):
        problem, solution, idx = task
        return annotate_solution(
            reasoner_mc, problem, solution, idx, params.n_mc, params.t_mc, seed, params.stride
        )

    results: list[list[StepAnnotation]] = []
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool_exec:
            futures = [pool_exec.submit(run, t) for t in tasks]
            for fut in futures:
                try:
                    results.append(fut.result())
                except (TransportError, ProtocolError, CorpusMissError, GradingError):
                    failed += 1
    else:
        for t in tasks:
            try:
                results.append(run(t))
            except (TransportError, ProtocolError, CorpusMissError, GradingError):
                failed += 1

    annotations = [a for group in results for a in group]
    annotations.sort(key=lambda a: (a.problem_id, a.solution_index, a.prefix_len))

    seen = set()
    duplicates = 0
    for s in pool:
        key = (s.problem_id, tuple(s.texts))
        if key in seen:
            duplicates += 1
        seen.add(key)

    manifest = {
        "problems": len(problems),
        "solutions": len(pool),
        "annotations": len(annotations),
        "duplicate_solutions": duplicates,
        "failed_solutions": failed,
        "grading_errors": tally.get("grading_errors", 0),
        "partial": failed > 0,
        "wall_time_s": round(time.perf_counter() - started, 3),
        "seed": seed,
    }
    provenance = "anno-" + stable_digest(params.to_dict(), seed)[:12]
    return AnnotationDataset(
        annotations=annotations,
        solutions=pool,
        params=params,
        provenance=provenance,
        manifest=manifest,
    )


def build_output_supervision_set(
    reasoner: Reasoner,
    problems: list[Problem],
    pool: list[Solution],
    extra_multiplier: int,
    t_g: float,
    seed: int,
) -> list[tuple[Solution, int]]:
    """Binary-labeled whole solutions for output-supervised training.

    With ``extra_multiplier`` > 1, generates (multiplier - 1) x the pool's
    per-problem count of additional graded solutions so the output-supervised
    scorer sees label volume comparable to the per-step annotations.
    """
    if extra_multiplier < 1:
        raise InvalidInputError("extra_multiplier must be at least 1")
    for s in pool:
        if s.correct is None:
            raise InvalidInputError("pool solutions must be graded")
    labeled = [(s, int(s.correct)) for s in pool]
    if extra_multiplier > 1:
        grouped = group_by_problem(pool)
        by_problem = {p.id: p for p in problems}
        for pid in sorted(grouped):
            problem = by_problem.get(pid)
            if problem is None:
                raise InvalidInputError(f"pool references unknown problem {pid!r}")
            n_extra = (extra_multiplier - 1) * len(grouped[pid])
            extra = generate_pool(reasoner, [problem], n_extra, t_g, derive_seed(seed, "osv_extra", pid))
            labeled.extend((s, int(s.correct)) for s in extra)
    return labeled
