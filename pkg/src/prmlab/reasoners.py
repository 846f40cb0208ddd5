"""Completion backends: analytic chain simulator, replay corpus, remote HTTP.

All backends share one contract: ``complete(problem, prefix, params)`` returns
exactly ``params.n`` completions of the given step prefix. With an empty
prefix this is full-solution generation.

The simulator models a solution as a fatal-error chain: while the chain is
valid, step ``j`` goes fatally wrong with probability ``e_j`` scaled by
temperature; once invalid it stays invalid, and the final answer is the
problem's reference iff the chain survived. That makes the probability that a
valid prefix completes correctly a closed-form product, which
:func:`true_prefix_correctness` evaluates exactly.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import _kernels
from .core import ANSWER_MARKER, GradingSpec, Problem, Solution, Step, canonicalize_answer, parse_solution
from .errors import CorpusMissError, InvalidInputError, ProtocolError, TransportError
from .text import answer_step_text, decode_hidden_flag, reasoning_step_text
from .util import derive_seed, prefix_digest, read_jsonl, write_jsonl

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.7


@dataclass(frozen=True)
class ReasonerParams:
    """Sampling parameters for one completion call."""

    temperature: float = DEFAULT_TEMPERATURE
    max_steps: int = 64
    n: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise InvalidInputError("temperature must be nonnegative")
        if self.max_steps < 1:
            raise InvalidInputError("max_steps must be positive")
        if self.n < 1:
            raise InvalidInputError("n must be positive")


@dataclass
class Completion:
    """Steps continuing a prefix, with the extracted final answer if any."""

    steps: list[Step]
    final_answer: Fraction | None = None


@dataclass(frozen=True)
class TemperatureScale:
    """Multiplicative error-rate factor as a function of temperature.

    ``factor(t) = t / reference``: at the reference temperature the nominal
    per-step error rates apply; hotter sampling scales them up, colder down.
    """

    reference: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        if self.reference <= 0:
            raise InvalidInputError("temperature scale reference must be positive")

    def factor(self, temperature: float) -> float:
        return temperature / self.reference


@dataclass(frozen=True)
class SimSpec:
    """Per-problem parameters of the fatal-error chain simulator.

    ``stop_after_error`` is the per-step probability that an already-invalid
    chain ends early (emits the answer marker before reaching the full chain
    length). Valid chains always run the whole chain, so correct solutions
    carry the full step count while wrong ones vary in length, and the
    probability that a valid prefix completes correctly is unaffected.
    """

    chain_length: int
    error_rates: tuple[float, ...]
    wrong_answer_pool_size: int = 4
    observation_correlation: float = 0.9
    temperature_scale: TemperatureScale = field(default_factory=TemperatureScale)
    stop_after_error: float = 0.0

    def __post_init__(self):
        if self.chain_length < 1:
            raise InvalidInputError("chain_length must be positive")
        if len(self.error_rates) != self.chain_length:
            raise InvalidInputError("need one error rate per chain step")
        if any(e < 0 or e > 1 for e in self.error_rates):
            raise InvalidInputError("error rates must lie in [0, 1]")
        if self.wrong_answer_pool_size < 1:
            raise InvalidInputError("wrong_answer_pool_size must be positive")
        if not 0 <= self.observation_correlation <= 1:
            raise InvalidInputError("observation_correlation must lie in [0, 1]")
        if not 0 <= self.stop_after_error <= 1:
            raise InvalidInputError("stop_after_error must lie in [0, 1]")

    def effective_rates(self, temperature: float) -> np.ndarray:
        """Temperature-scaled per-step error probabilities, clipped to [0, 1]."""
        rates = np.asarray(self.error_rates, dtype=np.float64)
        return np.clip(rates * self.temperature_scale.factor(temperature), 0.0, 1.0)

    def to_dict(self) -> dict:
        return {
            "chain_length": self.chain_length,
            "error_rates": list(self.error_rates),
            "wrong_answer_pool_size": self.wrong_answer_pool_size,
            "observation_correlation": self.observation_correlation,
            "temperature_scale": {"reference": self.temperature_scale.reference},
            "stop_after_error": self.stop_after_error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimSpec":
        return cls(
            chain_length=d["chain_length"],
            error_rates=tuple(d["error_rates"]),
            wrong_answer_pool_size=d["wrong_answer_pool_size"],
            observation_correlation=d["observation_correlation"],
            temperature_scale=TemperatureScale(d["temperature_scale"]["reference"]),
            stop_after_error=d.get("stop_after_error", 0.0),
        )


class Reasoner:
    """Shared completion contract. Subclasses implement ``_complete``."""

    reasoner_id: str = "reasoner"

    def complete(self, problem: Problem, prefix: list[Step], params: ReasonerParams) -> list[Completion]:
        if len(prefix) > params.max_steps:
            raise InvalidInputError(
                f"prefix has {len(prefix)} steps, more than max_steps={params.max_steps}"
            )
        for pos, step in enumerate(prefix, start=1):
            if step.index != pos:
                raise InvalidInputError("prefix step indices must be 1..i contiguous")
        completions = self._complete(problem, prefix, params)
        if len(completions) != params.n:
            raise ProtocolError(
                f"{self.reasoner_id} returned {len(completions)} completions, expected {params.n}"
            )
        return completions

    def _complete(self, problem, prefix, params):  # pragma: no cover - abstract
        raise NotImplementedError


def _is_marker(text: str) -> bool:
    return text.strip().startswith(ANSWER_MARKER)


def _decode_prefix_validity(spec: SimSpec, problem: Problem, prefix: list[Step]) -> tuple[int, bool]:
    """(number of reasoning steps, validity) of a simulator-produced prefix.

    Raises :class:`InvalidInputError` when the prefix could not have come from
    this simulator (missing hidden flags, marker not last, too long).
    """
    valid = True
    reasoning = 0
    for pos, step in enumerate(prefix):
        if _is_marker(step.text):
            if pos != len(prefix) - 1:
                raise InvalidInputError("answer marker must be the last prefix step")
            answer = canonicalize_answer(step.text.strip()[len(ANSWER_MARKER):] or "?")
            valid = valid and answer == problem.grading.reference
            continue
        flag = decode_hidden_flag(step.text)
        if flag is None:
            raise InvalidInputError(
                f"prefix step {step.index} was not produced by this simulator (no state token)"
            )
        valid = valid and flag
        reasoning += 1
    if reasoning > spec.chain_length:
        raise InvalidInputError(
            f"prefix has {reasoning} reasoning steps but the chain length is {spec.chain_length}"
        )
    return reasoning, valid


class SimulatedReasoner(Reasoner):
    """Analytic fatal-error chain reasoner over a per-problem spec table."""

    def __init__(self, specs: dict[str, SimSpec], reasoner_id: str = "sim"):
        self.specs = dict(specs)
        self.reasoner_id = reasoner_id

    def spec_for(self, problem: Problem) -> SimSpec:
        try:
            return self.specs[problem.id]
        except KeyError:
            raise InvalidInputError(f"no simulator spec for problem {problem.id!r}") from None

    def _complete(self, problem, prefix, params):
        spec = self.spec_for(problem)
        done, prefix_valid = _decode_prefix_validity(spec, problem, prefix)
        if prefix and _is_marker(prefix[-1].text):
            raise InvalidInputError("prefix already ends in an answer marker; nothing to complete")
        length = spec.chain_length
        remaining = length - done
        n = params.n
        rng = np.random.default_rng(
            derive_seed("sim", self.reasoner_id, params.seed, problem.id, prefix_digest([s.text for s in prefix]))
        )
        # Fixed draw layout keeps outcomes identical across kernel backends.
        fail_u = rng.random((n, remaining))
        obs_u = rng.random((n, remaining))
        stop_u = rng.random((n, remaining))
        ans_u = rng.random(n)
        rates = spec.effective_rates(params.temperature)[done:]
        match_p = (1.0 + spec.observation_correlation) / 2.0
        if remaining:
            valid, obs, last = _kernels.rollout(
                rates, fail_u, obs_u, stop_u, match_p, spec.stop_after_error, prefix_valid
            )
            end_valid = valid[np.arange(n), last - 1].astype(bool)
        else:
            valid = np.zeros((n, 0), dtype=np.uint8)
            obs = valid
            last = np.zeros(n, dtype=np.int64)
            end_valid = np.full(n, prefix_valid, dtype=bool)
        wrong_idx = (ans_u * spec.wrong_answer_pool_size).astype(np.int64)
        reference = problem.grading.reference
        completions = []
        for k in range(n):
            steps = []
            for j in range(int(last[k])):
                steps.append(
                    Step(
                        index=done + 1 + j,
                        text=reasoning_step_text(done + 1 + j, valid[k, j] == 1, obs[k, j] == 1),
                    )
                )
            answer = reference if end_valid[k] else reference + 1 + int(wrong_idx[k])
            steps.append(Step(index=done + int(last[k]) + 1, text=answer_step_text(answer)))
            completions.append(Completion(steps=steps, final_answer=answer))
        return completions


def true_prefix_correctness(
    spec: SimSpec,
    problem: Problem,
    prefix: list[Step],
    temperature: float = DEFAULT_TEMPERATURE,
) -> float:
    """Exact probability that completing ``prefix`` yields a correct solution.

    Zero for an invalid prefix; otherwise the product of per-step survival
    probabilities over the remaining chain at the given temperature.
    """
    done, valid = _decode_prefix_validity(spec, problem, prefix)
    if not valid:
        return 0.0
    rates = spec.effective_rates(temperature)[done:]
    return float(np.prod(1.0 - rates)) if rates.size else 1.0


# ---------------------------------------------------------------------------
# Replay corpus backend
# ---------------------------------------------------------------------------


def _completion_to_dict(completion: Completion) -> dict:
    return {
        "steps": [s.text for s in completion.steps],
        "final_answer": None if completion.final_answer is None else str(completion.final_answer),
    }


def corpus_record(problem_id: str, prefix_texts: list[str], completions: list[Completion]) -> dict:
    return {
        "problem_id": problem_id,
        "prefix_hash": prefix_digest(prefix_texts),
        "completions": [_completion_to_dict(c) for c in completions],
    }


def save_corpus(path, records: list[dict]) -> None:
    write_jsonl(path, records)


def load_corpus(path) -> dict[tuple[str, str], list[dict]]:
    corpus: dict[tuple[str, str], list[dict]] = {}
    for rec in read_jsonl(path):
        corpus.setdefault((rec["problem_id"], rec["prefix_hash"]), []).extend(rec["completions"])
    return corpus


class ReplayReasoner(Reasoner):
    """Deterministic backend that replays recorded completions.

    Records are keyed by (problem id, prefix hash); a call returns ``n``
    stored completions starting at an offset derived from the seed.
    """

    def __init__(self, corpus: dict[tuple[str, str], list[dict]], reasoner_id: str = "replay"):
        self.corpus = corpus
        self.reasoner_id = reasoner_id

    @classmethod
    def from_file(cls, path, reasoner_id: str = "replay") -> "ReplayReasoner":
        return cls(load_corpus(path), reasoner_id=reasoner_id)

    def _complete(self, problem, prefix, params):
        key = (problem.id, prefix_digest([s.text for s in prefix]))
        records = self.corpus.get(key)
        if not records:
            raise CorpusMissError(f"no recorded completions for key {key}")
        if len(records) < params.n:
            raise CorpusMissError(
                f"key {key} has {len(records)} recorded completions, need {params.n}"
            )
        offset = params.seed % (len(records) - params.n + 1)
        out = []
        for rec in records[offset : offset + params.n]:
            steps = [
                Step(index=len(prefix) + 1 + j, text=t) for j, t in enumerate(rec["steps"])
            ]
            answer = rec["final_answer"]
            out.append(Completion(steps=steps, final_answer=None if answer is None else Fraction(answer)))
        return out


# ---------------------------------------------------------------------------
# Remote HTTP backend
# ---------------------------------------------------------------------------


@dataclass
class HttpEndpointConfig:
    """Connection and wire-format settings for a remote completion endpoint."""

    base_url: str
    path: str = "/v1/completions"
    model: str = "default"
    token_env: str | None = None
    timeout: float = 30.0
    max_retries: int = 3
    backoff: float = 0.5
    parallelism: int = 4
    max_tokens: int = 256
    solution_format: str = "math_lines"
    request_fields: dict = field(
        default_factory=lambda: {
            "model": "model",
            "prompt": "prompt",
            "temperature": "temperature",
            "n": "n",
            "max_tokens": "max_tokens",
        }
    )
    response_texts_field: str = "completions"
    response_text_key: str | None = None


class HttpReasoner(Reasoner):
    """JSON-over-HTTP completion client with retry, backoff, and a
    bounded number of in-flight requests."""

    def __init__(self, config: HttpEndpointConfig, reasoner_id: str = "http"):
        self.config = config
        self.reasoner_id = reasoner_id
        self._gate = threading.Semaphore(config.parallelism)

    def _auth_headers(self) -> dict:
        import os

        headers = {"Content-Type": "application/json"}
        if self.config.token_env:
            token = os.environ.get(self.config.token_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def _build_prompt(self, problem: Problem, prefix: list[Step]) -> str:
        parts = [problem.statement]
        parts.extend(s.text for s in prefix)
        return "\n".join(parts) + ("\n" if prefix else "")

    def _request_once(self, body: bytes):
        import requests

        url = self.config.base_url.rstrip("/") + self.config.path
        return requests.post(url, data=body, headers=self._auth_headers(), timeout=self.config.timeout)

    def _complete(self, problem, prefix, params):
        import requests

        cfg = self.config
        fields = cfg.request_fields
        payload = {
            fields["model"]: cfg.model,
            fields["prompt"]: self._build_prompt(problem, prefix),
            fields["temperature"]: params.temperature,
            fields["n"]: params.n,
            fields["max_tokens"]: cfg.max_tokens,
        }
        body = json.dumps(payload).encode("utf-8")
        last_error = "no attempt made"
        with self._gate:
            for attempt in range(cfg.max_retries + 1):
                if attempt:
                    time.sleep(cfg.backoff * (2 ** (attempt - 1)))
                try:
                    resp = self._request_once(body)
                except (requests.ConnectionError, requests.Timeout) as exc:
                    last_error = f"connection failed: {exc}"
                    continue
                if resp.status_code == 429 or resp.status_code >= 500:
                    last_error = f"retryable status {resp.status_code}"
                    continue
                if resp.status_code != 200:
                    raise ProtocolError(
                        f"endpoint returned status {resp.status_code}: {resp.text[:500]}"
                    )
                return self._parse_response(resp.text, prefix, params)
        raise TransportError(
            f"{cfg.base_url} unreachable after {cfg.max_retries + 1} attempts ({last_error})"
        )

    def _parse_response(self, raw: str, prefix, params):
        cfg = self.config
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            log.error("malformed completion response payload: %r", raw[:1000])
            raise ProtocolError(f"response body is not valid JSON: {exc}") from exc
        try:
            items = doc[cfg.response_texts_field]
            texts = [it[cfg.response_text_key] if cfg.response_text_key else it for it in items]
        except (KeyError, TypeError) as exc:
            log.error("unexpected completion response shape: %r", raw[:1000])
            raise ProtocolError(f"response lacks field {cfg.response_texts_field!r}") from exc
        if len(texts) != params.n:
            raise ProtocolError(f"endpoint returned {len(texts)} texts, expected {params.n}")
        completions = []
        for text in texts:
            parsed = parse_solution(text, cfg.solution_format)
            steps = [
                Step(index=len(prefix) + 1 + j, text=s.text) for j, s in enumerate(parsed.steps)
            ]
            completions.append(Completion(steps=steps, final_answer=parsed.final_answer))
        return completions


# ---------------------------------------------------------------------------
# Synthetic problem suites
# ---------------------------------------------------------------------------

_FILLER_A = ("ledger", "pipeline", "circuit", "inventory", "voltage", "budget", "queue", "lattice")
_FILLER_B = ("balance", "throughput", "residue", "yield", "drift", "margin", "load", "count")


def make_problem_suite(
    n_verify_train: int,
    n_test: int,
    *,
    n_train: int = 0,
    chain_length: tuple[int, int] = (4, 6),
    error_rate: tuple[float, float] = (0.1, 0.2),
    observation_correlation: float = 0.9,
    wrong_answer_pool_size: int = 4,
    stop_after_error: float = 0.3,
    temperature_reference: float = DEFAULT_TEMPERATURE,
    seed: int = 0,
) -> tuple[list[Problem], dict[str, SimSpec]]:
    """Build a synthetic problem set plus its per-problem simulator specs.

    Chain lengths are drawn uniformly from the inclusive ``chain_length``
    range and per-step error rates uniformly from ``error_rate`` (pass equal
    endpoints for constants).
    """
    rng = np.random.default_rng(derive_seed("suite", seed))
    splits = ["train"] * n_train + ["verify_train"] * n_verify_train + ["test"] * n_test
    problems: list[Problem] = []
    specs: dict[str, SimSpec] = {}
    scale = TemperatureScale(reference=temperature_reference)
    for k, split in enumerate(splits):
        length = int(rng.integers(chain_length[0], chain_length[1] + 1))
        lo, hi = error_rate
        rates = tuple(float(x) for x in (rng.random(length) * (hi - lo) + lo))
        reference = Fraction(int(rng.integers(100, 1000)))
        noun_a = _FILLER_A[int(rng.integers(len(_FILLER_A)))]
        noun_b = _FILLER_B[int(rng.integers(len(_FILLER_B)))]
        pid = f"p{k:04d}"
        problems.append(
            Problem(
                id=pid,
                statement=(
                    f"task {k}: trace the {noun_a} {noun_b} through {length} updates "
                    f"and report the final value"
                ),
                grading=GradingSpec.numeric(reference),
                split=split,
            )
        )
        specs[pid] = SimSpec(
            chain_length=length,
            error_rates=rates,
            wrong_answer_pool_size=wrong_answer_pool_size,
            observation_correlation=observation_correlation,
            temperature_scale=scale,
            stop_after_error=stop_after_error,
        )
    return problems, specs


def save_sim_specs(path, specs: dict[str, SimSpec]) -> None:
    write_jsonl(path, ({"problem_id": pid, **spec.to_dict()} for pid, spec in specs.items()))


def load_sim_specs(path) -> dict[str, SimSpec]:
    out = {}
    for rec in read_jsonl(path):
        pid = rec.pop("problem_id")
        out[pid] = SimSpec.from_dict(rec)
    return out


def completion_to_solution(problem: Problem, prefix: list[Step], completion: Completion, source: str) -> Solution:
    """Assemble a full solution from a prefix and one of its completions."""
    steps = list(prefix) + list(completion.steps)
    return Solution(
        problem_id=problem.id,
        steps=steps,
        final_answer=completion.final_answer,
        source=source,
    )
