"""Hashed text features for prefix scoring.

A prefix feature vector concatenates: hashed statement n-grams, hashed n-grams
of the current step, hashed n-grams of all earlier steps (history), two
positional coordinates, and (optionally) the decoded observable channel. The
map is deterministic given the config, whose hashing seed is recorded so
trained models stay usable.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .core import Problem, Solution, Step
from .errors import InvalidInputError
from .text import decode_observation, tokenize

N_POSITIONAL = 2
N_OBSERVABLE = 2


@dataclass(frozen=True)
class FeatureConfig:
    statement_dims: int = 64
    step_dims: int = 192
    ngram_max: int = 2
    hash_seed: int = 7
    max_steps: int = 64
    observable_channel: bool = True

    def __post_init__(self):
        if self.statement_dims < 1 or self.step_dims < 1:
            raise InvalidInputError("feature dims must be positive")
        if self.ngram_max < 1:
            raise InvalidInputError("ngram_max must be at least 1")
        if self.max_steps < 1:
            raise InvalidInputError("max_steps must be positive")

    @property
    def dim(self) -> int:
        extra = N_OBSERVABLE if self.observable_channel else 0
        return self.statement_dims + 2 * self.step_dims + N_POSITIONAL + extra

    def to_dict(self) -> dict:
        return {
            "statement_dims": self.statement_dims,
            "step_dims": self.step_dims,
            "ngram_max": self.ngram_max,
            "hash_seed": self.hash_seed,
            "max_steps": self.max_steps,
            "observable_channel": self.observable_channel,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(**d)


def _ngrams(tokens: list[str], n_max: int) -> list[str]:
    grams = list(tokens)
    for n in range(2, n_max + 1):
        grams.extend(" ".join(tokens[i : i + n]) for i in range(len(tokens) - n + 1))
    return grams


def _l2(vec: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


class _Extractor:
    """Caches hashed counts per statement and per unique step text."""

    def __init__(self, config: FeatureConfig):
        self.config = config
        self._crc_seed = config.hash_seed & 0xFFFFFFFF
        self._statement_cache: dict[str, np.ndarray] = {}
        self._step_cache: dict[str, np.ndarray] = {}

    def _hashed_counts(self, text: str, dims: int) -> np.ndarray:
        vec = np.zeros(dims, dtype=np.float64)
        for gram in _ngrams(tokenize(text), self.config.ngram_max):
            idx = zlib.crc32(gram.encode("utf-8"), self._crc_seed) % dims
            vec[idx] += 1.0
        return vec

    def statement_counts(self, problem: Problem) -> np.ndarray:
        cached = self._statement_cache.get(problem.id)
        if cached is None:
            cached = _l2(self._hashed_counts(problem.statement, self.config.statement_dims))
            self._statement_cache[problem.id] = cached
        return cached

    def step_counts(self, text: str) -> np.ndarray:
        cached = self._step_cache.get(text)
        if cached is None:
            cached = self._hashed_counts(text, self.config.step_dims)
            self._step_cache[text] = cached
        return cached

    def rows(self, problem: Problem, steps: list[Step]) -> np.ndarray:
        """Feature rows for every prefix 1..len(steps), in order.

        Hashed count regions are L2-normalized per row, so feature magnitude
        does not grow with prefix length.
        """
        cfg = self.config
        if not steps:
            raise InvalidInputError("feature extraction requires at least one step")
        s_dims, t_dims = cfg.statement_dims, cfg.step_dims
        out = np.zeros((len(steps), cfg.dim), dtype=np.float64)
        stmt = self.statement_counts(problem)
        history = np.zeros(t_dims, dtype=np.float64)
        obs_sum = 0.0
        obs_count = 0
        pos_base = s_dims + 2 * t_dims
        for i, step in enumerate(steps):
            cur = self.step_counts(step.text)
            row = out[i]
            row[:s_dims] = stmt
            row[s_dims : s_dims + t_dims] = _l2(cur)
            row[s_dims + t_dims : pos_base] = _l2(history)
            row[pos_base] = (i + 1) * 0.1
            row[pos_base + 1] = float(i + 1) / cfg.max_steps
            if cfg.observable_channel:
                obs = decode_observation(step.text)
                if obs:
                    obs_sum += obs
                    obs_count += 1
                row[pos_base + 2] = float(obs)
                row[pos_base + 3] = obs_sum / obs_count if obs_count else 0.0
            history = history + cur
        return out


_EXTRACTORS: dict[FeatureConfig, _Extractor] = {}


def _extractor(config: FeatureConfig) -> _Extractor:
    ext = _EXTRACTORS.get(config)
    if ext is None:
        ext = _Extractor(config)
        _EXTRACTORS[config] = ext
    return ext


def extract_features(problem: Problem, steps: list[Step], config: FeatureConfig) -> np.ndarray:
    """Feature vector for the prefix ``steps[0:i]`` (the whole list given)."""
    return _extractor(config).rows(problem, steps)[-1]


def prefix_feature_matrix(problem: Problem, solution: Solution, config: FeatureConfig) -> np.ndarray:
    """One feature row per prefix of the solution, shape (m, dim)."""
    return _extractor(config).rows(problem, solution.steps)
