"""Command line interface: generate, annotate, train, evaluate, pipeline, bench.

Stages share a run directory and are cached by content digest: a stage reruns
only when its config slice, the tool version, or any input file changed.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

from . import __version__
from .aggregate import parse_aggregation_spec
from .annotate import AnnotationDataset, AnnotationParams, build_annotation_dataset, build_output_supervision_set
from .config import ReasonerConfig, RunConfig, load_config
from .core import load_problems, save_problems
from .errors import (
    ConfigError,
    CorpusMissError,
    GradingError,
    InvalidInputError,
    ParseError,
    PrmlabError,
    ProtocolError,
    TransportError,
    TrainingError,
    UnsupportedMethodError,
)
from .evaluate import (
    SolutionPool,
    best_of_n_eval,
    build_pool,
    no_verifier_baseline,
    oracle_ceiling,
    save_reports,
    save_reports_csv,
    self_consistency_eval,
)
from .manifest import StageManifest, digest_tree, now_iso, should_skip, stage_key, write_manifest
from .reasoners import (
    HttpEndpointConfig,
    HttpReasoner,
    ReplayReasoner,
    SimulatedReasoner,
    load_sim_specs,
    make_problem_suite,
    save_sim_specs,
)
from .util import derive_seed, sha256_file
from .verifier import TrainConfig, load_model, save_model, train_output_verifier, train_verifier

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_TRANSPORT = 3
EXIT_GRADING = 4
EXIT_PARTIAL = 5


@dataclass
class StageStatus:
    stage: str
    skipped: bool
    partial: bool = False


def _build_reasoner(rc: ReasonerConfig, base_dir: Path, specs=None):
    if rc.backend == "simulator":
        if specs is None:
            raise InvalidInputError("simulator backend needs per-problem sim specs")
        return SimulatedReasoner(specs, reasoner_id=rc.id)
    if rc.backend == "replay":
        return ReplayReasoner.from_file(base_dir / rc.corpus_path, reasoner_id=rc.id)
    endpoint = HttpEndpointConfig(
        base_url=rc.base_url,
        path=rc.path,
        model=rc.model,
        token_env=rc.token_env,
        timeout=rc.timeout,
        max_retries=rc.max_retries,
        backoff=rc.backoff,
        parallelism=rc.parallelism,
        max_tokens=rc.max_tokens,
        solution_format=rc.solution_format,
        request_fields=rc.request_fields,
        response_texts_field=rc.response_texts_field,
        response_text_key=rc.response_text_key,
    )
    return HttpReasoner(endpoint, reasoner_id=rc.id)


def _problem_universe(config: RunConfig, base_dir: Path):
    pc = config.problems
    if pc.source == "files":
        problems = load_problems(base_dir / pc.problems_path)
        specs = load_sim_specs(base_dir / pc.sim_specs_path) if pc.sim_specs_path else None
        return problems, specs
    problems, specs = make_problem_suite(
        pc.verify_train,
        pc.test,
        n_train=pc.train,
        chain_length=tuple(pc.chain_length),
        error_rate=tuple(pc.error_rate),
        observation_correlation=pc.observation_correlation,
        wrong_answer_pool_size=pc.wrong_answer_pool_size,
        stop_after_error=pc.stop_after_error,
        temperature_reference=pc.temperature_reference,
        seed=config.seed,
    )
    return problems, specs


def _finish_stage(run_dir: Path, stage_dir: Path, stage: str, key: str, config_slice: dict,
                  inputs: dict, counts: dict, started: str, partial: bool = False) -> None:
    manifest = StageManifest(
        stage=stage,
        key=key,
        config=config_slice,
        inputs=inputs,
        outputs=digest_tree(stage_dir),
        counts=counts,
        started=started,
        ended=now_iso(),
        partial=partial,
        version=__version__,
    )
    write_manifest(run_dir, stage_dir, manifest)


def cmd_generate(config: RunConfig, run_dir: Path, base_dir: Path, force: bool = False) -> StageStatus:
    stage_dir = run_dir / "generate"
    config_slice = {
        "seed": config.seed,
        "problems": asdict(config.problems),
        "reasoner": asdict(config.reasoner),
        "generate": asdict(config.generate),
    }
    inputs = {}
    if config.problems.source == "files":
        inputs["problems"] = sha256_file(base_dir / config.problems.problems_path)
        if config.problems.sim_specs_path:
            inputs["sim_specs"] = sha256_file(base_dir / config.problems.sim_specs_path)
    key = stage_key(__version__, config_slice, inputs)
    if not force and should_skip(stage_dir, key):
        return StageStatus("generate", skipped=True)
    started = now_iso()
    problems, specs = _problem_universe(config, base_dir)
    stage_dir.mkdir(parents=True, exist_ok=True)
    save_problems(stage_dir / "problems.jsonl", problems)
    if specs is not None:
        save_sim_specs(stage_dir / "sim_specs.jsonl", specs)
    reasoner = _build_reasoner(config.reasoner, base_dir, specs)
    train_problems = [p for p in problems if p.split == "verify_train"]
    test_problems = [p for p in problems if p.split == "test"]
    pool_train = build_pool(
        reasoner, train_problems, config.generate.n_g, config.generate.t_g, derive_seed(config.seed, "pool_train")
    )
    pool_test = build_pool(
        reasoner,
        test_problems,
        config.generate.test_pool_n,
        config.generate.test_pool_temperature,
        derive_seed(config.seed, "pool_test"),
    )
    pool_train.save(stage_dir / "pool_train")
    pool_test.save(stage_dir / "pool_test")
    counts = {
        "problems": len(problems),
        "train_pool_solutions": len(train_problems) * pool_train.n,
        "test_pool_solutions": len(test_problems) * pool_test.n,
        "train_pool_accuracy": pool_train.mean_accuracy(),
        "test_pool_accuracy": pool_test.mean_accuracy(),
    }
    _finish_stage(run_dir, stage_dir, "generate", key, config_slice, inputs, counts, started)
    return StageStatus("generate", skipped=False)


def cmd_annotate(config: RunConfig, run_dir: Path, base_dir: Path, force: bool = False,
                 pool_dir: Path | None = None) -> StageStatus:
    stage_dir = run_dir / "annotate"
    generate_dir = run_dir / "generate"
    mc = config.mc_reasoner
    config_slice = {"seed": config.seed, "annotate": asdict(config.annotate), "reasoner_mc": asdict(mc)}
    inputs = {f"generate/{k}": v for k, v in digest_tree(generate_dir).items()}
    key = stage_key(__version__, config_slice, inputs)
    if not force and should_skip(stage_dir, key):
        return StageStatus("annotate", skipped=True)
    started = now_iso()
    problems = load_problems(generate_dir / "problems.jsonl")
    specs_path = generate_dir / "sim_specs.jsonl"
    specs = load_sim_specs(specs_path) if specs_path.exists() else None
    pool = SolutionPool.load(pool_dir or (generate_dir / "pool_train"))
    flat = [s for p in pool.problems for s in pool.solutions[p.id]]
    reasoner_mc = _build_reasoner(mc, base_dir, specs)
    params = AnnotationParams(
        n_g=config.generate.n_g,
        t_g=config.generate.t_g,
        n_mc=config.annotate.n_mc,
        t_mc=config.annotate.t_mc,
        stride=config.annotate.stride,
        reasoner_g=config.reasoner.id,
        reasoner_mc=mc.id,
    )
    dataset = build_annotation_dataset(
        None,
        reasoner_mc,
        [p for p in problems if p.split == "verify_train"],
        params,
        seed=derive_seed(config.seed, "annotate"),
        pool=flat,
        parallelism=config.annotate.parallelism,
    )
    stage_dir.mkdir(parents=True, exist_ok=True)
    dataset.save(stage_dir)
    partial = bool(dataset.manifest.get("partial"))
    _finish_stage(run_dir, stage_dir, "annotate", key, config_slice, inputs, dict(dataset.manifest), started, partial)
    return StageStatus("annotate", skipped=False, partial=partial)


def cmd_train(config: RunConfig, run_dir: Path, base_dir: Path, force: bool = False,
              dataset_dir: Path | None = None) -> StageStatus:
    stage_dir = run_dir / "train"
    generate_dir = run_dir / "generate"
    annotate_dir = dataset_dir or (run_dir / "annotate")
    config_slice = {
        "seed": config.seed,
        "features": config.features.to_dict(),
        "train": asdict(config.train),
    }
    inputs = {f"annotate/{k}": v for k, v in digest_tree(annotate_dir).items()}
    problems_file = generate_dir / "problems.jsonl"
    inputs["generate/problems.jsonl"] = sha256_file(problems_file)
    key = stage_key(__version__, config_slice, inputs)
    if not force and should_skip(stage_dir, key):
        return StageStatus("train", skipped=True)
    started = now_iso()
    problems = load_problems(problems_file)
    train_problems = [p for p in problems if p.split == "verify_train"]
    dataset = AnnotationDataset.load(annotate_dir)
    stage_dir.mkdir(parents=True, exist_ok=True)
    final_losses = []
    for k in range(config.train.seeds):
        cfg = TrainConfig(
            learning_rate=config.train.learning_rate,
            l2=config.train.l2,
            epochs=config.train_epochs(),
            batch_size=config.train.batch_size,
            seed=derive_seed(config.seed, "model", k),
        )
        try:
            if config.train.mode == "output" and config.train.osv_extra_multiplier > 1:
                specs_path = generate_dir / "sim_specs.jsonl"
                specs = load_sim_specs(specs_path) if specs_path.exists() else None
                reasoner = _build_reasoner(config.reasoner, base_dir, specs)
                labeled = build_output_supervision_set(
                    reasoner,
                    train_problems,
                    dataset.solutions,
                    config.train.osv_extra_multiplier,
                    config.generate.t_g,
                    derive_seed(config.seed, "osv_extra"),
                )
                model = train_output_verifier(train_problems, labeled, config.features, cfg)
            else:
                model = train_verifier(
                    train_problems, dataset, config.train.mode, config.train.objective, config.features, cfg
                )
        except TrainingError as exc:
            raise TrainingError(f"model seed {k}: {exc}") from exc
        save_model(stage_dir / f"model_{k:02d}.json", model)
        final_losses.append(model.training_log[-1] if model.training_log else None)
    counts = {"models": config.train.seeds, "final_losses": final_losses}
    _finish_stage(run_dir, stage_dir, "train", key, config_slice, inputs, counts, started)
    return StageStatus("train", skipped=False)


def cmd_evaluate(config: RunConfig, run_dir: Path, base_dir: Path, force: bool = False,
                 models_dir: Path | None = None, pool_dir: Path | None = None) -> StageStatus:
    stage_dir = run_dir / "evaluate"
    generate_dir = run_dir / "generate"
    train_dir = models_dir or (run_dir / "train")
    pool_path = pool_dir or (generate_dir / "pool_test")
    config_slice = {"seed": config.seed, "evaluate": asdict(config.evaluate)}
    inputs = {f"train/{k}": v for k, v in digest_tree(train_dir).items()}
    inputs.update({f"pool_test/{k}": v for k, v in digest_tree(Path(pool_path)).items()})
    key = stage_key(__version__, config_slice, inputs)
    if not force and should_skip(stage_dir, key):
        return StageStatus("evaluate", skipped=True)
    started = now_iso()
    pool = SolutionPool.load(pool_path)
    model_files = sorted(Path(train_dir).glob("model_*.json"))
    models = [load_model(p) for p in model_files]
    known_ids = {p.id for p in load_problems(generate_dir / "problems.jsonl")}
    pool_ids = {p.id for p in pool.problems}
    if not pool_ids <= known_ids:
        raise InvalidInputError("evaluation pool references problems outside the run's problem set")
    eval_seed = derive_seed(config.seed, "evaluate")
    ns = config.evaluate.ns
    resamples = config.evaluate.resamples
    reports = []
    for method in config.evaluate.methods:
        if method == "no_verifier":
            reports.append(no_verifier_baseline(pool, ns, resamples, eval_seed))
        elif method == "oracle":
            reports.append(oracle_ceiling(pool, ns, resamples, eval_seed))
        elif method == "self_consistency":
            reports.append(self_consistency_eval(pool, ns, resamples, eval_seed))
        else:
            if not models:
                raise InvalidInputError("verifier methods require trained models")
            spec = parse_aggregation_spec(method.split(":", 1)[1])
            reports.append(best_of_n_eval(pool, models, spec, ns, resamples, eval_seed))
    stage_dir.mkdir(parents=True, exist_ok=True)
    save_reports(stage_dir / "report.json", reports)
    save_reports_csv(stage_dir / "report.csv", reports)
    counts = {"methods": len(reports), "models": len(models)}
    _finish_stage(run_dir, stage_dir, "evaluate", key, config_slice, inputs, counts, started)
    return StageStatus("evaluate", skipped=False)


def cmd_pipeline(config: RunConfig, run_dir: Path, base_dir: Path, force: bool = False) -> list[StageStatus]:
    statuses = [cmd_generate(config, run_dir, base_dir, force)]
    statuses.append(cmd_annotate(config, run_dir, base_dir, force))
    statuses.append(cmd_train(config, run_dir, base_dir, force))
    statuses.append(cmd_evaluate(config, run_dir, base_dir, force))
    return statuses


def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prmlab", description=__doc__)
    parser.add_argument("--version", action="version", version=f"prmlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "annotate", "train", "evaluate", "pipeline"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--run-dir", default="run", help="run directory (default: ./run)")
        p.add_argument("--force", action="store_true", help="ignore the stage cache")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if name in ("generate", "annotate", "pipeline"):
            p.add_argument("--n-g", type=int, default=None, help="override generate.n_g")
            p.add_argument("--t-g", type=float, default=None, help="override generate.t_g")
        if name in ("annotate", "pipeline"):
            p.add_argument("--n-mc", type=int, default=None, help="override annotate.n_mc")
            p.add_argument("--t-mc", type=float, default=None, help="override annotate.t_mc")
            p.add_argument("--stride", type=int, default=None, help="override annotate.stride")
            p.add_argument("--parallelism", type=int, default=None, help="override annotate.parallelism")
        if name in ("train", "pipeline"):
            p.add_argument("--mode", default=None, choices=("output", "process"), help="override train.mode")
            p.add_argument("--objective", default=None, choices=("soft", "hard"), help="override train.objective")
            p.add_argument("--epochs", type=float, default=None, help="override train.epochs")
            p.add_argument("--lr", type=float, default=None, help="override train.learning_rate")
            p.add_argument("--l2", type=float, default=None, help="override train.l2")
        if name == "annotate":
            p.add_argument("--pool-dir", default=None, help="override the solution pool directory")
        if name == "train":
            p.add_argument("--dataset-dir", default=None, help="override the annotation dataset directory")
        if name == "evaluate":
            p.add_argument("--models-dir", default=None, help="override the trained model directory")
            p.add_argument("--pool-dir", default=None, help="override the evaluation pool directory")
    b = sub.add_parser("bench", help="benchmark the numba kernels against the numpy fallback")
    b.add_argument("--rollouts", type=int, default=200_000)
    b.add_argument("--chain-length", type=int, default=8)
    b.add_argument("--rows", type=int, default=20_000)
    b.add_argument("--dims", type=int, default=512)
    b.add_argument("--repeats", type=int, default=3)
    return parser


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    """Fold optional CLI flag overrides into the loaded config."""
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    for attr, target, field_name in (
        ("n_g", config.generate, "n_g"),
        ("t_g", config.generate, "t_g"),
        ("n_mc", config.annotate, "n_mc"),
        ("t_mc", config.annotate, "t_mc"),
        ("stride", config.annotate, "stride"),
        ("parallelism", config.annotate, "parallelism"),
        ("mode", config.train, "mode"),
        ("objective", config.train, "objective"),
        ("epochs", config.train, "epochs"),
        ("lr", config.train, "learning_rate"),
        ("l2", config.train, "l2"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            setattr(target, field_name, value)
    return config


def main(argv=None) -> int:
    args = _make_parser().parse_args(argv)
    if args.command == "bench":
        from .bench import run_benchmarks

        run_benchmarks(args.rollouts, args.chain_length, args.rows, args.dims, args.repeats)
        return EXIT_OK
    try:
        config = _apply_overrides(load_config(args.config), args)
        run_dir = Path(args.run_dir)
        base_dir = Path(args.config).resolve().parent
        if args.command == "generate":
            statuses = [cmd_generate(config, run_dir, base_dir, args.force)]
        elif args.command == "annotate":
            pool_dir = Path(args.pool_dir) if args.pool_dir else None
            statuses = [cmd_annotate(config, run_dir, base_dir, args.force, pool_dir)]
        elif args.command == "train":
            dataset_dir = Path(args.dataset_dir) if args.dataset_dir else None
            statuses = [cmd_train(config, run_dir, base_dir, args.force, dataset_dir)]
        elif args.command == "evaluate":
            models_dir = Path(args.models_dir) if args.models_dir else None
            pool_dir = Path(args.pool_dir) if args.pool_dir else None
            statuses = [cmd_evaluate(config, run_dir, base_dir, args.force, models_dir, pool_dir)]
        else:
            statuses = cmd_pipeline(config, run_dir, base_dir, args.force)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    except (InvalidInputError, UnsupportedMethodError, ParseError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TransportError, ProtocolError, CorpusMissError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except GradingError as exc:
        print(f"grading infrastructure error: {exc}", file=sys.stderr)
        return EXIT_GRADING
    except PrmlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    for status in statuses:
        word = "skipped (cached)" if status.skipped else "completed"
        if status.partial:
            word = "PARTIAL"
        print(f"[{status.stage}] {word}")
    if any(s.partial for s in statuses):
        return EXIT_PARTIAL
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
