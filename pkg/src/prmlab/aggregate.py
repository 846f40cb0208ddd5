"""Aggregation of per-step probabilities into one solution score.

Ten aggregation kinds: extrema (min, max) plus sums and means of log
probabilities, probabilities, logits, and odds. An optional window restricts
aggregation to the last k steps or the last p percent of steps (ceiling rule,
never empty).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

KINDS = (
    "min",
    "max",
    "sum_logprob",
    "mean_logprob",
    "sum_prob",
    "mean_prob",
    "sum_logit",
    "mean_logit",
    "sum_odd",
    "mean_odd",
)

_SPEC_RE = re.compile(r"^(?P<kind>[a-z_]+)(?:@(?P<wkind>last_k|last_pct)=(?P<wval>[0-9.]+))?$")


@dataclass(frozen=True)
class AggregationSpec:
    """An aggregation kind plus an optional trailing-window restriction."""

    kind: str
    last_k: int | None = None
    last_pct: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown aggregation kind {self.kind!r}")
        if self.last_k is not None and self.last_pct is not None:
            raise InvalidInputError("window can be last_k or last_pct, not both")
        if self.last_k is not None and self.last_k < 1:
            raise InvalidInputError("last_k must be a positive integer")
        if self.last_pct is not None and not 0 < self.last_pct <= 100:
            raise InvalidInputError("last_pct must lie in (0, 100]")

    def label(self) -> str:
        if self.last_k is not None:
            return f"{self.kind}@last_k={self.last_k}"
        if self.last_pct is not None:
            pct = self.last_pct
            return f"{self.kind}@last_pct={int(pct) if pct == int(pct) else pct}"
        return self.kind


def parse_aggregation_spec(text: str) -> AggregationSpec:
    """Parse ``<kind>[@last_k=K|@last_pct=P]``, e.g. ``sum_logit@last_k=3``."""
    m = _SPEC_RE.match(text.strip())
    if not m:
        raise InvalidInputError(f"unparsable aggregation spec {text!r}")
    kind = m.group("kind")
    if m.group("wkind") == "last_k":
        value = m.group("wval")
        if "." in value:
            raise InvalidInputError("last_k must be an integer")
        return AggregationSpec(kind, last_k=int(value))
    if m.group("wkind") == "last_pct":
        return AggregationSpec(kind, last_pct=float(m.group("wval")))
    return AggregationSpec(kind)


def window(scores, spec: AggregationSpec) -> np.ndarray:
    """Apply the spec's window: all scores, the last k, or the last
    ceil(p*n/100) (always at least one)."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInputError("scores must be a nonempty 1-d sequence")
    if spec.last_k is not None:
        return arr[-min(spec.last_k, arr.size):]
    if spec.last_pct is not None:
        count = max(1, math.ceil(spec.last_pct * arr.size / 100.0))
        return arr[-count:]
    return arr


def aggregate(scores, spec: AggregationSpec) -> float:
    """Collapse windowed step scores into one solution score.

    Every score must lie strictly inside (0, 1); clamping is the scorer's
    responsibility.
    """
    arr = window(scores, spec)
    if arr.min() <= 0.0 or arr.max() >= 1.0:
        raise InvalidInputError("step scores must lie strictly inside (0, 1)")
    kind = spec.kind
    if kind == "min":
        return float(arr.min())
    if kind == "max":
        return float(arr.max())
    if kind == "sum_logprob":
        return float(np.log(arr).sum())
    if kind == "mean_logprob":
        return float(np.log(arr).sum() / arr.size)
    if kind == "sum_prob":
        return float(arr.sum())
    if kind == "mean_prob":
        return float(arr.sum() / arr.size)
    logits = np.log(arr) - np.log1p(-arr)
    if kind == "sum_logit":
        return float(logits.sum())
    if kind == "mean_logit":
        return float(logits.sum() / arr.size)
    odds = arr / (1.0 - arr)
    if kind == "sum_odd":
        return float(odds.sum())
    return float(odds.sum() / arr.size)  # mean_odd


def rank_solutions(scored: list[tuple[object, object]], spec: AggregationSpec) -> int:
    """Index of the highest-aggregate (solution, scores) pair.

    Ties break toward the lowest list index, so ranking is deterministic.
    """
    if not scored:
        raise InvalidInputError("cannot rank an empty list")
    best_idx = 0
    best_value = -math.inf
    for idx, (_, scores) in enumerate(scored):
        value = aggregate(scores, spec)
        if value > best_value:
            best_idx = idx
            best_value = value
    return best_idx
