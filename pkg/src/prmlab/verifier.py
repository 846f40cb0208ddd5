"""Step scorers: linear models over hashed features, trained with soft- or
hard-label binary cross entropy, plus an exact tabular oracle scorer.

Output-supervised training is process-supervised training restricted to
final-prefix rows; scoring an output-mode model yields a single score for the
last step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .annotate import AnnotationDataset, group_by_problem
from .core import Problem, Solution, canonicalize_answer
from .errors import InvalidInputError, TrainingError
from .features import FeatureConfig, prefix_feature_matrix
from .text import decode_hidden_flag
from .util import derive_seed, dump_json, load_json

SCORE_CLAMP_EPS = 1e-6

MODES = ("output", "process")
OBJECTIVES = ("soft", "hard")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    l2: float = 1e-4
    epochs: float = 2.0
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be positive")
        if self.l2 < 0:
            raise InvalidInputError("l2 must be nonnegative")
        if self.epochs <= 0:
            raise InvalidInputError("epochs must be positive")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be positive")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "l2": self.l2,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def loss_and_grad(weights: np.ndarray, bias: float, X: np.ndarray, y: np.ndarray, l2: float):
    """Mean soft-label BCE plus L2, with its exact analytic gradient.

    loss = mean(-(y log p + (1-y) log(1-p))) + l2/2 ||w||^2 where
    p = sigmoid(Xw + b). Returns (loss, grad_w, grad_b).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = X @ weights + bias
    # -(y log p + (1-y) log(1-p)) == softplus(z) - y z, stable for large |z|
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * weights @ weights)
    diff = sigmoid(z) - y
    grad_w = X.T @ diff / X.shape[0] + l2 * weights
    grad_b = float(np.mean(diff))
    return loss, grad_w, grad_b


def fit(X: np.ndarray, y: np.ndarray, config: TrainConfig) -> tuple[np.ndarray, float, list[float]]:
    """Minibatch SGD from zero init; returns (weights, bias, loss log).

    The loss log holds the full-dataset loss after each completed (or final
    partial) epoch. Fractional ``epochs`` run that fraction of an epoch's
    batches, which is how early stopping by data fraction is expressed.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.size == 0 or X.shape[0] == 0:
        raise TrainingError("training dataset is empty")
    if not np.isfinite(X).all():
        bad = int(np.argwhere(~np.isfinite(X).all(axis=1))[0][0])
        raise TrainingError(f"non-finite features in record {bad}")
    if not np.isfinite(y).all() or y.min() < 0 or y.max() > 1:
        raise TrainingError("labels must be finite and lie in [0, 1]")
    n, d = X.shape
    rng = np.random.default_rng(derive_seed("fit", config.seed))
    w = np.zeros(d, dtype=np.float64)
    b_arr = np.zeros(1, dtype=np.float64)
    per_epoch = (n + config.batch_size - 1) // config.batch_size
    total = max(1, int(round(config.epochs * per_epoch)))
    done = 0
    losses: list[float] = []
    while done < total:
        order = rng.permutation(n)
        batches = min(per_epoch, total - done)
        _kernels.sgd_epoch(X, y, w, b_arr, order, config.learning_rate, config.l2, config.batch_size, batches)
        done += batches
        loss = loss_and_grad(w, float(b_arr[0]), X, y, config.l2)[0]
        if not math.isfinite(loss):
            raise TrainingError(f"training diverged after {done} batches")
        losses.append(loss)
    return w, float(b_arr[0]), losses


@dataclass
class VerifierModel:
    """A trained step scorer: linear weights over hashed prefix features."""

    mode: str
    objective: str
    features: FeatureConfig
    weights: np.ndarray
    bias: float
    train: TrainConfig
    training_log: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}")
        if self.objective not in OBJECTIVES:
            raise InvalidInputError(f"objective must be one of {OBJECTIVES}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (self.features.dim,):
            raise InvalidInputError("weight vector length must equal the feature dimension")
        if not np.isfinite(self.weights).all() or not math.isfinite(self.bias):
            raise InvalidInputError("model parameters must be finite")

    def score_steps(self, problem: Problem, solution: Solution) -> np.ndarray:
        return score_steps(self, problem, solution)


def score_steps(model: VerifierModel, problem: Problem, solution: Solution) -> np.ndarray:
    """Per-step probabilities, clamped inside (0, 1).

    Process mode scores every prefix; output mode scores only the final one
    (a length-1 result).
    """
    rows = prefix_feature_matrix(problem, solution, model.features)
    if model.mode == "output":
        rows = rows[-1:]
    p = sigmoid(rows @ model.weights + model.bias)
    return np.clip(p, SCORE_CLAMP_EPS, 1.0 - SCORE_CLAMP_EPS)


def build_training_rows(
    problems: list[Problem],
    dataset: AnnotationDataset,
    mode: str,
    objective: str,
    config: FeatureConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix and label vector from an annotation dataset.

    Output mode keeps only final-prefix rows (whole-solution labels); the hard
    objective binarizes labels to 1 iff the soft label exceeds 0.
    """
    if mode not in MODES:
        raise InvalidInputError(f"mode must be one of {MODES}")
    if objective not in OBJECTIVES:
        raise InvalidInputError(f"objective must be one of {OBJECTIVES}")
    by_problem = {p.id: p for p in problems}
    grouped = group_by_problem(dataset.solutions)
    rows: list[np.ndarray] = []
    labels: list[float] = []
    matrix_cache: dict[tuple[str, int], np.ndarray] = {}
    for ann in dataset.annotations:
        problem = by_problem.get(ann.problem_id)
        if problem is None:
            raise InvalidInputError(f"annotation references unknown problem {ann.problem_id!r}")
        solution = grouped[ann.problem_id][ann.solution_index]
        if mode == "output" and ann.prefix_len != len(solution.steps):
            continue
        key = (ann.problem_id, ann.solution_index)
        matrix = matrix_cache.get(key)
        if matrix is None:
            matrix = prefix_feature_matrix(problem, solution, config)
            matrix_cache[key] = matrix
        rows.append(matrix[ann.prefix_len - 1])
        labels.append(float(ann.hard_label) if objective == "hard" else ann.soft_label)
    if not rows:
        raise TrainingError("no training rows for the requested mode")
    return np.stack(rows), np.asarray(labels, dtype=np.float64)


def train_verifier(
    problems: list[Problem],
    dataset: AnnotationDataset,
    mode: str,
    objective: str,
    features: FeatureConfig,
    config: TrainConfig,
) -> VerifierModel:
    """Train a scorer on an annotation dataset."""
    X, y = build_training_rows(problems, dataset, mode, objective, features)
    w, b, losses = fit(X, y, config)
    return VerifierModel(
        mode=mode,
        objective=objective,
        features=features,
        weights=w,
        bias=b,
        train=config,
        training_log=losses,
    )


def train_output_verifier(
    problems: list[Problem],
    labeled: list[tuple[Solution, int]],
    features: FeatureConfig,
    config: TrainConfig,
) -> VerifierModel:
    """Train an output-mode scorer on explicitly labeled whole solutions."""
    by_problem = {p.id: p for p in problems}
    rows = []
    labels = []
    for solution, label in labeled:
        problem = by_problem.get(solution.problem_id)
        if problem is None:
            raise InvalidInputError(f"labeled solution references unknown problem {solution.problem_id!r}")
        rows.append(prefix_feature_matrix(problem, solution, features)[-1])
        labels.append(float(label))
    if not rows:
        raise TrainingError("no labeled solutions to train on")
    X = np.stack(rows)
    y = np.asarray(labels, dtype=np.float64)
    w, b, losses = fit(X, y, config)
    return VerifierModel(
        mode="output",
        objective="hard",
        features=features,
        weights=w,
        bias=b,
        train=config,
        training_log=losses,
    )


class TabularScorer:
    """Oracle scorer that decodes the simulator's hidden validity channel.

    Scores 1 - eps while the prefix is valid and eps once it is not; the
    answer-marker line decodes through exact answer comparison. Useful for
    noise-free ceiling experiments.
    """

    mode = "process"

    def __init__(self, eps: float = SCORE_CLAMP_EPS):
        self.eps = eps

    def score_steps(self, problem: Problem, solution: Solution) -> np.ndarray:
        from .core import ANSWER_MARKER

        scores = np.empty(len(solution.steps), dtype=np.float64)
        valid = True
        for i, step in enumerate(solution.steps):
            text = step.text.strip()
            if text.startswith(ANSWER_MARKER):
                answer = canonicalize_answer(text[len(ANSWER_MARKER):] or "?")
                valid = valid and answer == problem.grading.reference
            else:
                flag = decode_hidden_flag(step.text)
                if flag is None:
                    raise InvalidInputError(
                        f"step {step.index} carries no hidden state token; "
                        "the tabular scorer only applies to simulator output"
                    )
                valid = valid and flag
            scores[i] = 1.0 - self.eps if valid else self.eps
        return scores


def save_model(path, model: VerifierModel) -> None:
    dump_json(
        path,
        {
            "schema": "prmlab.model.v1",
            "mode": model.mode,
            "objective": model.objective,
            "features": model.features.to_dict(),
            "weights": [float(x) for x in model.weights],
            "bias": model.bias,
            "train": model.train.to_dict(),
            "training_log": model.training_log,
        },
    )


def load_model(path) -> VerifierModel:
    d = load_json(path)
    if d.get("schema") != "prmlab.model.v1":
        raise InvalidInputError(f"unrecognized model schema in {path}")
    return VerifierModel(
        mode=d["mode"],
        objective=d["objective"],
        features=FeatureConfig.from_dict(d["features"]),
        weights=np.asarray(d["weights"], dtype=np.float64),
        bias=d["bias"],
        train=TrainConfig.from_dict(d["train"]),
        training_log=list(d["training_log"]),
    )
