import math

import numpy as np
import pytest

from prmlab.annotate import AnnotationDataset
from prmlab.core import GradingSpec, Problem, Step
from prmlab.errors import InvalidInputError, TrainingError
from prmlab.features import FeatureConfig
from prmlab.reasoners import ReasonerParams, true_prefix_correctness
from prmlab.text import decode_hidden_flag
from prmlab.verifier import (
    SCORE_CLAMP_EPS,
    TabularScorer,
    TrainConfig,
    VerifierModel,
    build_training_rows,
    fit,
    load_model,
    loss_and_grad,
    save_model,
    score_steps,
    sigmoid,
    train_verifier,
)

from conftest import single_problem, small_dataset, small_pool, split, suite


class TestLossAndGrad:
    def test_symmetric_point_loss_is_log2(self, rng):
        X = rng.normal(size=(6, 4))
        y = np.full(6, 0.5)
        loss, _, _ = loss_and_grad(np.zeros(4), 0.0, X, y, l2=0.0)
        assert loss == pytest.approx(math.log(2), rel=1e-12)

    def test_gradient_vanishes_when_predictions_match_labels(self, rng):
        w = rng.normal(size=3) * 0.5
        b = 0.3
        X = rng.normal(size=(5, 3))
        y = sigmoid(X @ w + b)
        l2 = 0.01
        _, grad_w, grad_b = loss_and_grad(w, b, X, y, l2)
        np.testing.assert_allclose(grad_w, l2 * w, atol=1e-12)
        assert grad_b == pytest.approx(0.0, abs=1e-12)

    def test_matches_central_finite_differences(self, rng):
        # independent oracle: numeric differentiation of the loss
        h = 1e-5
        for _ in range(25):
            d = int(rng.integers(2, 8))
            n = int(rng.integers(2, 10))
            w = rng.normal(size=d)
            b = float(rng.normal())
            X = rng.normal(size=(n, d))
            y = rng.uniform(0, 1, size=n)
            l2 = float(rng.uniform(0, 0.1))
            _, grad_w, grad_b = loss_and_grad(w, b, X, y, l2)
            fd = np.empty(d)
            for j in range(d):
                wp, wm = w.copy(), w.copy()
                wp[j] += h
                wm[j] -= h
                fd[j] = (loss_and_grad(wp, b, X, y, l2)[0] - loss_and_grad(wm, b, X, y, l2)[0]) / (2 * h)
            assert np.linalg.norm(fd - grad_w) / max(np.linalg.norm(grad_w), 1e-10) < 1e-4
            fd_b = (loss_and_grad(w, b + h, X, y, l2)[0] - loss_and_grad(w, b - h, X, y, l2)[0]) / (2 * h)
            assert abs(fd_b - grad_b) / max(abs(grad_b), 1e-10) < 1e-4


class TestFit:
    def _separable(self, rng, n=400, d=6):
        X = rng.normal(size=(n, d))
        w_true = rng.normal(size=d)
        y = (X @ w_true > 0).astype(float)
        return X, y

    def test_separable_data_reaches_high_accuracy(self, rng):
        X, y = self._separable(rng)
        w, b, losses = fit(X, y, TrainConfig(learning_rate=1.0, epochs=20, batch_size=32, seed=0))
        acc = np.mean((sigmoid(X @ w + b) > 0.5) == (y > 0.5))
        assert acc >= 0.99

    def test_loss_log_trends_down_on_separable_data(self, rng):
        X, y = self._separable(rng)
        _, _, losses = fit(X, y, TrainConfig(learning_rate=1.0, epochs=20, batch_size=32, seed=0))
        assert len(losses) == 20
        assert losses[-1] < 0.5 * losses[0]
        # smoothed non-increasing trend: allow small local upticks only
        for prev, cur in zip(losses, losses[1:]):
            assert cur <= prev * 1.10

    def test_constant_labels_predict_label_mean(self, rng):
        X = rng.normal(size=(300, 5))
        for target in (0.0, 1.0):
            y = np.full(300, target)
            w, b, _ = fit(X, y, TrainConfig(learning_rate=0.5, epochs=40, batch_size=32, seed=1))
            p = sigmoid(X @ w + b)
            assert abs(p.mean() - target) <= 0.02

    def test_same_seed_identical_weights(self, rng):
        X, y = self._separable(rng)
        cfg = TrainConfig(seed=7)
        w1, b1, _ = fit(X, y, cfg)
        w2, b2, _ = fit(X, y, cfg)
        assert np.array_equal(w1, w2)
        assert b1 == b2

    def test_fractional_epochs_run_fewer_batches(self, rng):
        X, y = self._separable(rng, n=256)
        w_frac, _, losses_frac = fit(X, y, TrainConfig(epochs=0.25, batch_size=32, seed=2))
        w_full, _, losses_full = fit(X, y, TrainConfig(epochs=1.0, batch_size=32, seed=2))
        assert len(losses_frac) == 1 and len(losses_full) == 1
        assert not np.array_equal(w_frac, w_full)

    def test_empty_dataset_rejected(self):
        with pytest.raises(TrainingError):
            fit(np.zeros((0, 3)), np.zeros(0), TrainConfig())

    def test_nonfinite_features_identified(self, rng):
        X = rng.normal(size=(10, 3))
        X[4, 1] = np.nan
        with pytest.raises(TrainingError, match="record 4"):
            fit(X, rng.uniform(0, 1, 10), TrainConfig())


def _train_models(seed=40, objective="soft", mode="process", **dataset_kw):
    problems, specs, sim, train_problems, dataset = small_dataset(seed=seed, **dataset_kw)
    cfg = TrainConfig(seed=seed)
    model = train_verifier(train_problems, dataset, mode, objective, FeatureConfig(), cfg)
    return problems, specs, sim, train_problems, dataset, model


class TestScoreSteps:
    def test_zero_weight_model_scores_half(self):
        problem, spec, sim = single_problem()
        from prmlab.reasoners import completion_to_solution

        sol = completion_to_solution(problem, [], sim.complete(problem, [], ReasonerParams(n=1, seed=3))[0], "s")
        cfg = FeatureConfig()
        model = VerifierModel(
            mode="process", objective="soft", features=cfg, weights=np.zeros(cfg.dim), bias=0.0, train=TrainConfig()
        )
        scores = score_steps(model, problem, sol)
        assert np.allclose(scores, 0.5)
        assert len(scores) == len(sol.steps)

    def test_output_mode_scores_only_final_step(self):
        problems, specs, sim, train_problems, dataset, model = _train_models(mode="output")
        problem = train_problems[0]
        from prmlab.annotate import group_by_problem

        sol = group_by_problem(dataset.solutions)[problem.id][0]
        assert len(score_steps(model, problem, sol)) == 1

    def test_scores_clamped_into_open_interval(self):
        problems, specs, sim, train_problems, dataset, model = _train_models()
        problem = train_problems[0]
        from prmlab.annotate import group_by_problem

        for sol in group_by_problem(dataset.solutions)[problem.id]:
            s = score_steps(model, problem, sol)
            assert (s >= SCORE_CLAMP_EPS).all() and (s <= 1 - SCORE_CLAMP_EPS).all()

    def test_learned_model_separates_validity_at_high_rho(self):
        # rho=1: observable equals hidden validity, so invalid-suffix steps
        # must score lower on average than valid ones
        problems, specs, sim, train_problems, dataset, model = _train_models(
            seed=41, observation_correlation=1.0, n_vt=16, n_g=6, n_mc=6, error_rate=(0.25, 0.25)
        )
        pool = small_pool(sim, split(problems, "test"), n=8, seed=42)
        valid_scores, invalid_scores = [], []
        for problem in pool.problems:
            for sol in pool.solutions[problem.id]:
                scores = score_steps(model, problem, sol)
                for step, s in zip(sol.steps, scores):
                    flag = decode_hidden_flag(step.text)
                    if flag is True:
                        valid_scores.append(s)
                    elif flag is False:
                        invalid_scores.append(s)
        assert np.mean(valid_scores) - np.mean(invalid_scores) > 0.1


class TestObjectives:
    def test_hard_objective_trains_on_binarized_labels(self):
        problems, specs, sim, train_problems, dataset = small_dataset(seed=43)
        cfg = FeatureConfig()
        X_soft, y_soft = build_training_rows(train_problems, dataset, "process", "soft", cfg)
        X_hard, y_hard = build_training_rows(train_problems, dataset, "process", "hard", cfg)
        assert np.array_equal(X_soft, X_hard)
        assert set(np.unique(y_hard)) <= {0.0, 1.0}
        assert np.array_equal(y_hard, (y_soft > 0).astype(float))

    def test_hard_objective_overestimates_relative_to_soft(self):
        # paired training seeds; mean predicted probability under the hard
        # objective dominates the soft one on the same prefixes
        problems, specs, sim, train_problems, dataset = small_dataset(
            seed=44, n_vt=16, n_test=32, n_g=6, n_mc=6, error_rate=(0.2, 0.3)
        )
        fc = FeatureConfig()
        diffs = []
        pool = small_pool(sim, split(problems, "test"), n=8, seed=45)
        for k in range(3):
            soft = train_verifier(train_problems, dataset, "process", "soft", fc, TrainConfig(seed=k))
            hard = train_verifier(train_problems, dataset, "process", "hard", fc, TrainConfig(seed=k))
            ps, ph = [], []
            for problem in pool.problems:
                for sol in pool.solutions[problem.id]:
                    ps.extend(score_steps(soft, problem, sol))
                    ph.extend(score_steps(hard, problem, sol))
            assert len(ps) >= 1000
            diffs.append(np.mean(ph) - np.mean(ps))
        assert all(d > 0 for d in diffs)

    def test_output_mode_equals_process_on_final_rows(self):
        problems, specs, sim, train_problems, dataset = small_dataset(seed=46)
        fc = FeatureConfig()
        final_only = AnnotationDataset(
            annotations=[
                a
                for a in dataset.annotations
                if a.mc_total == 0
            ],
            solutions=dataset.solutions,
            params=dataset.params,
            provenance=dataset.provenance,
        )
        cfg = TrainConfig(seed=5, epochs=1.0)
        out_model = train_verifier(train_problems, dataset, "output", "soft", fc, cfg)
        proc_model = train_verifier(train_problems, final_only, "process", "soft", fc, cfg)
        assert np.array_equal(out_model.weights, proc_model.weights)
        assert out_model.bias == proc_model.bias
        problem = train_problems[0]
        from prmlab.annotate import group_by_problem

        sol = group_by_problem(dataset.solutions)[problem.id][0]
        assert score_steps(out_model, problem, sol)[0] == score_steps(proc_model, problem, sol)[-1]

    def test_calibration_improves_with_data(self):
        # mean |p - c_true| on held-out prefixes shrinks as the training set
        # grows (averaged over 2 seeds, endpoints compared)
        sizes = [6, 24, 96]
        maes = []
        for size in sizes:
            per_seed = []
            for k in range(2):
                problems, specs = __import__("prmlab").make_problem_suite(
                    size, 12, chain_length=(4, 5), error_rate=(0.2, 0.2), seed=47 + k
                )
                from prmlab import (
                    AnnotationParams,
                    SimulatedReasoner,
                    build_annotation_dataset,
                )

                sim = SimulatedReasoner(specs, "sim-a")
                tp = split(problems, "verify_train")
                ds = build_annotation_dataset(
                    sim, sim, tp, AnnotationParams(n_g=6, n_mc=8, reasoner_g="sim-a", reasoner_mc="sim-a"), seed=48 + k
                )
                model = train_verifier(tp, ds, "process", "soft", FeatureConfig(), TrainConfig(seed=k))
                pool = small_pool(sim, split(problems, "test"), n=8, seed=49)
                errs = []
                for problem in pool.problems:
                    spec = specs[problem.id]
                    for sol in pool.solutions[problem.id]:
                        scores = score_steps(model, problem, sol)
                        for i in range(1, len(sol.steps)):
                            c_true = true_prefix_correctness(spec, problem, sol.steps[:i])
                            errs.append(abs(scores[i - 1] - c_true))
                per_seed.append(np.mean(errs))
            maes.append(np.mean(per_seed))
        assert maes[-1] < maes[0]

    def test_train_rejects_bad_mode(self):
        problems, specs, sim, train_problems, dataset = small_dataset(seed=50)
        with pytest.raises(InvalidInputError):
            train_verifier(train_problems, dataset, "stepwise", "soft", FeatureConfig(), TrainConfig())


class TestModelPersistence:
    def test_roundtrip_exact(self, tmp_path):
        problems, specs, sim, train_problems, dataset, model = _train_models(seed=51)
        path = tmp_path / "model.json"
        save_model(path, model)
        loaded = load_model(path)
        assert np.array_equal(loaded.weights, model.weights)
        assert loaded.bias == model.bias
        assert loaded.features == model.features
        assert loaded.mode == model.mode and loaded.objective == model.objective
        assert loaded.train == model.train
        save_model(tmp_path / "model2.json", loaded)
        assert (tmp_path / "model.json").read_bytes() == (tmp_path / "model2.json").read_bytes()

    def test_model_validation(self):
        cfg = FeatureConfig()
        with pytest.raises(InvalidInputError):
            VerifierModel(
                mode="process", objective="soft", features=cfg, weights=np.zeros(3), bias=0.0, train=TrainConfig()
            )
        with pytest.raises(InvalidInputError):
            VerifierModel(
                mode="process",
                objective="soft",
                features=cfg,
                weights=np.full(cfg.dim, np.inf),
                bias=0.0,
                train=TrainConfig(),
            )


class TestTabularScorer:
    def test_oracle_scores_track_hidden_validity(self):
        problem, spec, sim = single_problem(error_rates=[0.5] * 4)
        from prmlab.reasoners import completion_to_solution

        scorer = TabularScorer()
        for k in range(10):
            sol = completion_to_solution(problem, [], sim.complete(problem, [], ReasonerParams(n=1, seed=60 + k))[0], "s")
            scores = scorer.score_steps(problem, sol)
            valid = True
            for step, s in zip(sol.steps[:-1], scores[:-1]):
                valid = valid and decode_hidden_flag(step.text)
                assert (s > 0.5) == bool(valid)
            assert (scores[-1] > 0.5) == bool(sol.correct if sol.correct is not None else sol.final_answer == problem.grading.reference)

    def test_rejects_non_simulator_text(self):
        problem = Problem(id="x", statement="s", grading=GradingSpec.numeric(1))
        from prmlab.core import Solution

        sol = Solution(problem_id="x", steps=[Step(index=1, text="plain text")])
        with pytest.raises(InvalidInputError):
            TabularScorer().score_steps(problem, sol)


@pytest.fixture
def rng():
    return np.random.default_rng(31)
