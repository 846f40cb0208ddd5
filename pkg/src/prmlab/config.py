"""Declarative run configuration with strict validation.

A run config is one JSON document. Unknown keys are rejected, every problem
is reported (not just the first), and the validated config echoes verbatim
into stage manifests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .features import FeatureConfig
from .util import load_json

_BACKENDS = ("simulator", "replay", "http")
_MODES = ("output", "process")
_OBJECTIVES = ("soft", "hard")


@dataclass
class ProblemsConfig:
    source: str = "synthetic"
    verify_train: int = 40
    test: int = 40
    train: int = 0
    chain_length: list = field(default_factory=lambda: [4, 6])
    error_rate: list = field(default_factory=lambda: [0.1, 0.2])
    observation_correlation: float = 0.9
    wrong_answer_pool_size: int = 4
    stop_after_error: float = 0.3
    temperature_reference: float = 0.7
    problems_path: str | None = None
    sim_specs_path: str | None = None


@dataclass
class ReasonerConfig:
    backend: str = "simulator"
    id: str = "sim"
    corpus_path: str | None = None
    base_url: str | None = None
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


@dataclass
class GenerateConfig:
    n_g: int = 32
    t_g: float = 0.7
    test_pool_n: int = 128
    test_pool_temperature: float = 0.7


@dataclass
class AnnotateConfig:
    n_mc: int = 32
    t_mc: float = 0.7
    stride: int = 1
    parallelism: int = 1


@dataclass
class TrainSection:
    mode: str = "process"
    objective: str = "soft"
    learning_rate: float = 0.5
    l2: float = 1e-4
    epochs: float | None = None  # default: 1 for output mode, 2 for process
    batch_size: int = 64
    seeds: int = 5
    osv_extra_multiplier: int = 1


@dataclass
class EvaluateConfig:
    ns: list = field(default_factory=lambda: [2, 4, 8, 16, 32, 64, 128])
    resamples: int = 20
    methods: list = field(
        default_factory=lambda: ["verifier:max", "self_consistency", "no_verifier", "oracle"]
    )


@dataclass
class RunConfig:
    seed: int = 0
    problems: ProblemsConfig = field(default_factory=ProblemsConfig)
    reasoner: ReasonerConfig = field(default_factory=ReasonerConfig)
    reasoner_mc: ReasonerConfig | None = None
    generate: GenerateConfig = field(default_factory=GenerateConfig)
    annotate: AnnotateConfig = field(default_factory=AnnotateConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    train: TrainSection = field(default_factory=TrainSection)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)

    @property
    def mc_reasoner(self) -> ReasonerConfig:
        return self.reasoner_mc if self.reasoner_mc is not None else self.reasoner

    def train_epochs(self) -> float:
        if self.train.epochs is not None:
            return float(self.train.epochs)
        return 1.0 if self.train.mode == "output" else 2.0

    def to_dict(self) -> dict:
        from dataclasses import asdict

        d = {
            "seed": self.seed,
            "problems": asdict(self.problems),
            "reasoner": asdict(self.reasoner),
            "generate": asdict(self.generate),
            "annotate": asdict(self.annotate),
            "features": self.features.to_dict(),
            "train": asdict(self.train),
            "evaluate": asdict(self.evaluate),
        }
        if self.reasoner_mc is not None:
            d["reasoner_mc"] = asdict(self.reasoner_mc)
        return d


def _build_section(cls, data: dict, label: str, errors: list):
    fields = {f.name for f in cls.__dataclass_fields__.values()}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            errors.append(f"{label}: unknown key {key!r}")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except Exception as exc:  # field-level validation errors
        errors.append(f"{label}: {exc}")
        return cls()


def _check(cond: bool, message: str, errors: list) -> None:
    if not cond:
        errors.append(message)


def validate_config(data: dict, base_dir: Path | None = None) -> RunConfig:
    """Build a RunConfig from a raw dict, raising ConfigError listing every
    problem found. Relative paths resolve against ``base_dir``."""
    errors: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError(["config root must be a JSON object"])
    known = {
        "seed",
        "problems",
        "reasoner",
        "reasoner_mc",
        "generate",
        "annotate",
        "features",
        "train",
        "evaluate",
    }
    for key in data:
        if key not in known:
            errors.append(f"unknown top-level key {key!r}")

    seed = data.get("seed", 0)
    _check(isinstance(seed, int), "seed must be an integer", errors)

    problems = _build_section(ProblemsConfig, data.get("problems", {}), "problems", errors)
    reasoner = _build_section(ReasonerConfig, data.get("reasoner", {}), "reasoner", errors)
    reasoner_mc = None
    if data.get("reasoner_mc") is not None:
        reasoner_mc = _build_section(ReasonerConfig, data["reasoner_mc"], "reasoner_mc", errors)
    generate = _build_section(GenerateConfig, data.get("generate", {}), "generate", errors)
    annotate = _build_section(AnnotateConfig, data.get("annotate", {}), "annotate", errors)
    features = _build_section(FeatureConfig, data.get("features", {}), "features", errors)
    train = _build_section(TrainSection, data.get("train", {}), "train", errors)
    evaluate = _build_section(EvaluateConfig, data.get("evaluate", {}), "evaluate", errors)

    _check(problems.source in ("synthetic", "files"), "problems.source must be synthetic or files", errors)
    _check(problems.verify_train >= 0 and problems.test >= 0, "problem counts must be nonnegative", errors)
    if problems.source == "synthetic":
        _check(
            isinstance(problems.chain_length, list) and len(problems.chain_length) == 2,
            "problems.chain_length must be [min, max]",
            errors,
        )
        _check(
            isinstance(problems.error_rate, list) and len(problems.error_rate) == 2,
            "problems.error_rate must be [min, max]",
            errors,
        )
    for rc, label in ((reasoner, "reasoner"), (reasoner_mc, "reasoner_mc")):
        if rc is None:
            continue
        _check(rc.backend in _BACKENDS, f"{label}.backend must be one of {_BACKENDS}", errors)
        if rc.backend == "replay":
            _check(bool(rc.corpus_path), f"{label}.corpus_path is required for replay", errors)
        if rc.backend == "http":
            _check(bool(rc.base_url), f"{label}.base_url is required for http", errors)
    _check(generate.n_g >= 1, "generate.n_g must be at least 1", errors)
    _check(generate.test_pool_n >= 1, "generate.test_pool_n must be at least 1", errors)
    _check(annotate.n_mc >= 1, "annotate.n_mc must be at least 1", errors)
    _check(annotate.stride >= 1, "annotate.stride must be at least 1", errors)
    _check(annotate.parallelism >= 1, "annotate.parallelism must be at least 1", errors)
    _check(train.mode in _MODES, f"train.mode must be one of {_MODES}", errors)
    _check(train.objective in _OBJECTIVES, f"train.objective must be one of {_OBJECTIVES}", errors)
    _check(train.seeds >= 1, "train.seeds must be at least 1", errors)
    _check(train.learning_rate > 0, "train.learning_rate must be positive", errors)
    _check(train.osv_extra_multiplier >= 1, "train.osv_extra_multiplier must be at least 1", errors)
    if train.epochs is not None:
        _check(train.epochs > 0, "train.epochs must be positive", errors)
    _check(
        isinstance(evaluate.ns, list) and evaluate.ns and all(isinstance(n, int) and n >= 1 for n in evaluate.ns),
        "evaluate.ns must be a nonempty list of positive integers",
        errors,
    )
    _check(evaluate.resamples >= 1, "evaluate.resamples must be at least 1", errors)
    _check(isinstance(evaluate.methods, list) and evaluate.methods, "evaluate.methods must be nonempty", errors)
    for m in evaluate.methods:
        if not isinstance(m, str) or not (
            m in ("self_consistency", "no_verifier", "oracle") or m.startswith("verifier:")
        ):
            errors.append(f"evaluate.methods: unknown method {m!r}")
        elif m.startswith("verifier:"):
            from .aggregate import parse_aggregation_spec
            from .errors import InvalidInputError

            try:
                parse_aggregation_spec(m.split(":", 1)[1])
            except InvalidInputError as exc:
                errors.append(f"evaluate.methods: {exc}")

    base = Path(base_dir) if base_dir is not None else Path.cwd()
    for rc, label in ((reasoner, "reasoner"), (reasoner_mc, "reasoner_mc")):
        if rc is not None and rc.backend == "replay" and rc.corpus_path:
            if not (base / rc.corpus_path).exists():
                errors.append(f"{label}.corpus_path does not exist: {rc.corpus_path}")
    if problems.source == "files":
        for attr in ("problems_path", "sim_specs_path"):
            value = getattr(problems, attr)
            if attr == "problems_path" and not value:
                errors.append("problems.problems_path is required when source is files")
            if value and not (base / value).exists():
                errors.append(f"problems.{attr} does not exist: {value}")

    if errors:
        raise ConfigError(errors)
    return RunConfig(
        seed=seed,
        problems=problems,
        reasoner=reasoner,
        reasoner_mc=reasoner_mc,
        generate=generate,
        annotate=annotate,
        features=features,
        train=train,
        evaluate=evaluate,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    return validate_config(load_json(path), base_dir=path.parent)
