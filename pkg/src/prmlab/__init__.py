"""Step-level verifier lab: Monte Carlo annotation of intermediate solution
steps, process/output supervised scorer training, score aggregation, and a
best-of-n evaluation harness with an analytic chain simulator for ground truth.
"""

__version__ = "0.1.0"

from .core import (
    GradingSpec,
    Problem,
    Solution,
    Step,
    canonicalize_answer,
    grade,
    parse_solution,
)
from .reasoners import (
    Completion,
    HttpEndpointConfig,
    HttpReasoner,
    ReasonerParams,
    ReplayReasoner,
    SimSpec,
    SimulatedReasoner,
    make_problem_suite,
    true_prefix_correctness,
)
from .annotate import (
    AnnotationDataset,
    AnnotationParams,
    StepAnnotation,
    annotate_prefix,
    annotate_solution,
    build_annotation_dataset,
    build_output_supervision_set,
    generate_pool,
)
from .features import FeatureConfig, extract_features
from .verifier import TabularScorer, TrainConfig, VerifierModel, loss_and_grad, score_steps, train_verifier
from .aggregate import AggregationSpec, aggregate, parse_aggregation_spec, rank_solutions, window
from .evaluate import (
    EvalReport,
    SolutionPool,
    aggregation_sweep,
    best_of_n_eval,
    build_pool,
    no_verifier_baseline,
    oracle_ceiling,
    self_consistency_eval,
    transfer_eval,
)

__all__ = [
    "__version__",
    "GradingSpec",
    "Problem",
    "Solution",
    "Step",
    "canonicalize_answer",
    "grade",
    "parse_solution",
    "Completion",
    "HttpEndpointConfig",
    "HttpReasoner",
    "ReasonerParams",
    "ReplayReasoner",
    "SimSpec",
    "SimulatedReasoner",
    "make_problem_suite",
    "true_prefix_correctness",
    "AnnotationDataset",
    "AnnotationParams",
    "StepAnnotation",
    "annotate_prefix",
    "annotate_solution",
    "build_annotation_dataset",
    "build_output_supervision_set",
    "generate_pool",
    "FeatureConfig",
    "extract_features",
    "TabularScorer",
    "TrainConfig",
    "VerifierModel",
    "loss_and_grad",
    "score_steps",
    "train_verifier",
    "AggregationSpec",
    "aggregate",
    "parse_aggregation_spec",
    "rank_solutions",
    "window",
    "EvalReport",
    "SolutionPool",
    "aggregation_sweep",
    "best_of_n_eval",
    "build_pool",
    "no_verifier_baseline",
    "oracle_ceiling",
    "self_consistency_eval",
    "transfer_eval",
]
