"""Best-of-n evaluation: verifier selection curves, self-consistency and
no-verifier baselines, the oracle ceiling, aggregation sweeps, and
cross-reasoner transfer.

All methods evaluated with the same (pool, ns, resamples, seed) share the same
nested candidate draws: one permutation per (resample, problem), sliced to the
first n for each n. That makes the oracle ceiling non-decreasing in n by
construction and compares methods on identical candidate sets.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aggregate import KINDS, AggregationSpec, aggregate, rank_solutions
from .annotate import AnnotationDataset, group_by_problem
from .core import Problem, Solution, load_problems, load_solutions, save_problems, save_solutions
from .errors import GradingError, InvalidInputError, UnsupportedMethodError
from .reasoners import Reasoner
from .util import derive_seed, dump_json, load_json
from .verifier import SCORE_CLAMP_EPS


@dataclass
class SolutionPool:
    """A fixed pool of N graded solutions per problem from one reasoner."""

    problems: list[Problem]
    solutions: dict[str, list[Solution]]
    reasoner_id: str
    seed: int

    def __post_init__(self):
        counts = {len(self.solutions.get(p.id, [])) for p in self.problems}
        if len(counts) != 1:
            raise InvalidInputError("every problem must have the same number of pooled solutions")
        for p in self.problems:
            for s in self.solutions[p.id]:
                if s.correct is None:
                    raise InvalidInputError(f"ungraded solution in pool for problem {p.id}")

    @property
    def n(self) -> int:
        return len(self.solutions[self.problems[0].id])

    def mean_accuracy(self) -> float:
        flat = [s.correct for p in self.problems for s in self.solutions[p.id]]
        return float(np.mean(flat))

    def save(self, directory) -> None:
        directory = Path(directory)
        save_problems(directory / "problems.jsonl", self.problems)
        flat = [s for p in self.problems for s in self.solutions[p.id]]
        save_solutions(directory / "solutions.jsonl", flat)
        dump_json(
            directory / "pool.json",
            {"schema": "prmlab.pool.v1", "reasoner_id": self.reasoner_id, "seed": self.seed, "n": self.n},
        )

    @classmethod
    def load(cls, directory) -> "SolutionPool":
        directory = Path(directory)
        meta = load_json(directory / "pool.json")
        problems = load_problems(directory / "problems.jsonl")
        grouped = group_by_problem(load_solutions(directory / "solutions.jsonl"))
        return cls(
            problems=problems,
            solutions=grouped,
            reasoner_id=meta["reasoner_id"],
            seed=meta["seed"],
        )


def build_pool(
    reasoner: Reasoner, problems: list[Problem], n: int, temperature: float, seed: int
) -> SolutionPool:
    """Generate a pool of exactly ``n`` graded solutions per problem.

    Problems that come up short (grading infrastructure errors) are padded by
    extra generation rounds, never by duplication.
    """
    from .annotate import generate_pool

    if n < 1:
        raise InvalidInputError("pool size must be positive")
    solutions: dict[str, list[Solution]] = {}
    for problem in problems:
        got: list[Solution] = []
        for attempt in range(8):
            need = n - len(got)
            if need == 0:
                break
            got.extend(
                generate_pool(reasoner, [problem], need, temperature, derive_seed(seed, "pool", problem.id, attempt))
            )
        if len(got) < n:
            raise GradingError(f"could not fill pool for problem {problem.id}: {len(got)}/{n}")
        solutions[problem.id] = got[:n]
    return SolutionPool(problems=problems, solutions=solutions, reasoner_id=reasoner.reasoner_id, seed=seed)


@dataclass
class ReportRow:
    n: int
    mean: float
    std: float
    resamples: int

    def to_dict(self) -> dict:
        return {"n": self.n, "mean": self.mean, "std": self.std, "resamples": self.resamples}


@dataclass
class EvalReport:
    """Selection-accuracy curve over n for one method."""

    method: str
    rows: list[ReportRow]
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"method": self.method, "rows": [r.to_dict() for r in self.rows], "config": self.config}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            method=d["method"],
            rows=[ReportRow(**r) for r in d["rows"]],
            config=d["config"],
        )

    def accuracy_at(self, n: int) -> float:
        for row in self.rows:
            if row.n == n:
                return row.mean
        raise InvalidInputError(f"report has no row for n={n}")


def save_reports(path, reports: list[EvalReport]) -> None:
    dump_json(path, {"schema": "prmlab.report.v1", "reports": [r.to_dict() for r in reports]})


def load_reports(path) -> list[EvalReport]:
    doc = load_json(path)
    return [EvalReport.from_dict(d) for d in doc["reports"]]


def save_reports_csv(path, reports: list[EvalReport]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["method", "n", "mean", "std", "resamples"])
        for report in reports:
            for row in report.rows:
                writer.writerow([report.method, row.n, repr(row.mean), repr(row.std), row.resamples])


# ---------------------------------------------------------------------------
# Shared draw machinery
# ---------------------------------------------------------------------------


def _check_eval_args(pool: SolutionPool, ns, resamples: int) -> list[int]:
    if resamples < 1:
        raise InvalidInputError("resamples must be at least 1")
    ns = sorted(set(int(n) for n in ns))
    if not ns or ns[0] < 1:
        raise InvalidInputError("ns must contain positive integers")
    if ns[-1] > pool.n:
        raise InvalidInputError(f"n={ns[-1]} exceeds the pool size {pool.n}")
    return ns


def _correct_matrix(pool: SolutionPool) -> np.ndarray:
    return np.array(
        [[bool(s.correct) for s in pool.solutions[p.id]] for p in pool.problems], dtype=bool
    )


def _permutations(seed: int, resamples: int, P: int, N: int) -> list[np.ndarray]:
    """One candidate-order permutation matrix (P, N) per resample.

    Every method slices the same permutations, so the first n candidates are
    nested across n.
    """
    perms = []
    base = np.tile(np.arange(N), (P, 1))
    for r in range(resamples):
        rng = np.random.default_rng(derive_seed("perm", seed, r))
        perms.append(rng.permuted(base, axis=1))
    return perms


def _base_config(pool: SolutionPool, ns, resamples, seed) -> dict:
    return {
        "reasoner": pool.reasoner_id,
        "pool_n": pool.n,
        "problems": len(pool.problems),
        "ns": list(ns),
        "resamples": resamples,
        "seed": seed,
    }


# ---------------------------------------------------------------------------
# Methods
# ---------------------------------------------------------------------------


def best_of_n_eval(
    pool: SolutionPool,
    scorers: list,
    spec: AggregationSpec,
    ns,
    resamples: int,
    seed: int,
    method: str | None = None,
    extra_config: dict | None = None,
) -> EvalReport:
    """Verifier selection curve: draw n candidates, pick the best aggregate,
    score the pick's correctness. Mean and std run over scorers x resamples.
    """
    ns = _check_eval_args(pool, ns, resamples)
    if not scorers:
        raise InvalidInputError("at least one scorer is required")
    correct = _correct_matrix(pool)
    P, N = correct.shape
    agg = np.empty((len(scorers), P, N), dtype=np.float64)
    for mi, scorer in enumerate(scorers):
        for pi, problem in enumerate(pool.problems):
            for si, solution in enumerate(pool.solutions[problem.id]):
                agg[mi, pi, si] = aggregate(scorer.score_steps(problem, solution), spec)
    perms = _permutations(seed, resamples, P, N)
    rows_idx = np.arange(P)
    rows = []
    for n in ns:
        samples = []
        for mi in range(len(scorers)):
            for perm in perms:
                drawn = perm[:, :n]
                vals = agg[mi][rows_idx[:, None], drawn]
                chosen = drawn[rows_idx, np.argmax(vals, axis=1)]
                samples.append(correct[rows_idx, chosen].mean())
        samples = np.asarray(samples)
        rows.append(ReportRow(n=n, mean=float(samples.mean()), std=float(samples.std()), resamples=len(samples)))
    config = _base_config(pool, ns, resamples, seed)
    config["aggregation"] = spec.label()
    config["models"] = len(scorers)
    if extra_config:
        config.update(extra_config)
    return EvalReport(method=method or f"verifier:{spec.label()}", rows=rows, config=config)


def self_consistency_eval(pool: SolutionPool, ns, resamples: int, seed: int) -> EvalReport:
    """Majority vote over canonical final answers among the drawn candidates.

    Ties go to the largest group seen earliest. Only meaningful for pools with
    canonical answers; code-graded pools raise UnsupportedMethodError.
    """
    if any(p.grading.kind != "numeric_answer" for p in pool.problems):
        raise UnsupportedMethodError("self-consistency requires canonical numeric answers")
    ns = _check_eval_args(pool, ns, resamples)
    P, N = len(pool.problems), pool.n
    answer_ids = np.zeros((P, N), dtype=np.int64)
    group_correct: list[np.ndarray] = []
    for pi, problem in enumerate(pool.problems):
        mapping: dict = {}
        flags = []
        for si, sol in enumerate(pool.solutions[problem.id]):
            key = sol.final_answer
            if key not in mapping:
                mapping[key] = len(mapping)
                flags.append(key is not None and key == problem.grading.reference)
            answer_ids[pi, si] = mapping[key]
        group_correct.append(np.asarray(flags, dtype=bool))
    perms = _permutations(seed, resamples, P, N)
    rows = []
    for n in ns:
        samples = []
        for perm in perms:
            drawn = perm[:, :n]
            hits = 0
            for pi in range(P):
                counts: dict[int, int] = {}
                first: dict[int, int] = {}
                for j in range(n):
                    g = int(answer_ids[pi, drawn[pi, j]])
                    counts[g] = counts.get(g, 0) + 1
                    first.setdefault(g, j)
                winner = max(counts, key=lambda g: (counts[g], -first[g]))
                if group_correct[pi][winner]:
                    hits += 1
            samples.append(hits / P)
        samples = np.asarray(samples)
        rows.append(ReportRow(n=n, mean=float(samples.mean()), std=float(samples.std()), resamples=len(samples)))
    return EvalReport(method="self_consistency", rows=rows, config=_base_config(pool, ns, resamples, seed))


def no_verifier_baseline(pool: SolutionPool, ns, resamples: int, seed: int) -> EvalReport:
    """Uniform random pick among the drawn candidates (the flat line)."""
    ns = _check_eval_args(pool, ns, resamples)
    correct = _correct_matrix(pool)
    P, N = correct.shape
    perms = _permutations(seed, resamples, P, N)
    rows_idx = np.arange(P)
    rows = []
    for n in ns:
        samples = []
        for r, perm in enumerate(perms):
            rng = np.random.default_rng(derive_seed("pick", seed, n, r))
            cols = rng.integers(0, n, size=P)
            chosen = perm[rows_idx, cols]
            samples.append(correct[rows_idx, chosen].mean())
        samples = np.asarray(samples)
        rows.append(ReportRow(n=n, mean=float(samples.mean()), std=float(samples.std()), resamples=len(samples)))
    return EvalReport(method="no_verifier", rows=rows, config=_base_config(pool, ns, resamples, seed))


def oracle_ceiling(pool: SolutionPool, ns, resamples: int, seed: int) -> EvalReport:
    """Upper bound: a draw counts as solved iff any drawn candidate is correct."""
    ns = _check_eval_args(pool, ns, resamples)
    correct = _correct_matrix(pool)
    P, N = correct.shape
    perms = _permutations(seed, resamples, P, N)
    rows_idx = np.arange(P)
    rows = []
    for n in ns:
        samples = []
        for perm in perms:
            drawn = perm[:, :n]
            any_correct = correct[rows_idx[:, None], drawn].any(axis=1)
            samples.append(any_correct.mean())
        samples = np.asarray(samples)
        rows.append(ReportRow(n=n, mean=float(samples.mean()), std=float(samples.std()), resamples=len(samples)))
    return EvalReport(method="oracle", rows=rows, config=_base_config(pool, ns, resamples, seed))


def aggregation_sweep(
    problems: list[Problem],
    dataset: AnnotationDataset,
    pool: SolutionPool,
    scorers: list,
    specs: list[AggregationSpec] | None = None,
) -> list[dict]:
    """Paired (training-side, test-side) selection accuracy per aggregation.

    The training side aggregates the raw Monte Carlo labels of the annotated
    pool directly (no model); the test side uses the trained scorers on the
    evaluation pool. Both select once from the full candidate list.
    """
    if specs is None:
        specs = [AggregationSpec(kind) for kind in KINDS]
    by_problem = {p.id: p for p in problems}
    train_grouped = group_by_problem(dataset.solutions)
    series: dict[tuple[str, int], list[float]] = {}
    for ann in sorted(dataset.annotations, key=lambda a: (a.problem_id, a.solution_index, a.prefix_len)):
        series.setdefault((ann.problem_id, ann.solution_index), []).append(ann.soft_label)
    train_items = []
    for pid in sorted(train_grouped):
        sols = train_grouped[pid]
        scored = []
        for idx, sol in enumerate(sols):
            raw = series.get((pid, idx))
            if raw is None:
                continue
            clamped = np.clip(raw, SCORE_CLAMP_EPS, 1.0 - SCORE_CLAMP_EPS)
            scored.append((sol, clamped))
        if scored:
            train_items.append(scored)

    test_scores: list[dict[str, list[np.ndarray]]] = []
    for scorer in scorers:
        per_problem: dict[str, list[np.ndarray]] = {}
        for problem in pool.problems:
            per_problem[problem.id] = [
                scorer.score_steps(problem, s) for s in pool.solutions[problem.id]
            ]
        test_scores.append(per_problem)

    rows = []
    for spec in specs:
        train_hits = 0
        for scored in train_items:
            pick = rank_solutions(scored, spec)
            train_hits += bool(scored[pick][0].correct)
        train_acc = train_hits / len(train_items) if train_items else 0.0
        accs = []
        for per_problem in test_scores:
            hits = 0
            for problem in pool.problems:
                scored = list(zip(pool.solutions[problem.id], per_problem[problem.id]))
                pick = rank_solutions(scored, spec)
                hits += bool(scored[pick][0].correct)
            accs.append(hits / len(pool.problems))
        rows.append(
            {
                "spec": spec.label(),
                "train_accuracy": float(train_acc),
                "test_accuracy": float(np.mean(accs)) if accs else 0.0,
            }
        )
    return rows


def transfer_eval(
    scorers: list,
    pool_b: SolutionPool,
    spec: AggregationSpec,
    ns,
    resamples: int,
    seed: int,
    trained_on: str,
    train_problem_ids: set[str] | None = None,
) -> EvalReport:
    """Apply scorers trained on one reasoner's annotations to another
    reasoner's pool. The report method tag carries both reasoner ids."""
    if train_problem_ids is not None:
        pool_ids = {p.id for p in pool_b.problems}
        if pool_ids != set(train_problem_ids):
            raise InvalidInputError("transfer pools must share the same problem set")
    return best_of_n_eval(
        pool_b,
        scorers,
        spec,
        ns,
        resamples,
        seed,
        method=f"transfer:{trained_on}->{pool_b.reasoner_id}:{spec.label()}",
        extra_config={"trained_on": trained_on, "applied_to": pool_b.reasoner_id},
    )
