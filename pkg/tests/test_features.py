import numpy as np
import pytest

from prmlab.core import GradingSpec, Problem, Step
from prmlab.errors import InvalidInputError
from prmlab.features import N_OBSERVABLE, N_POSITIONAL, FeatureConfig, extract_features, prefix_feature_matrix
from prmlab.reasoners import ReasonerParams

from conftest import single_problem


def _problem(statement="count the beans in the jar"):
    return Problem(id="f1", statement=statement, grading=GradingSpec.numeric(3))


def _steps(texts):
    return [Step(index=i, text=t) for i, t in enumerate(texts, start=1)]


class TestFeatureConfig:
    def test_dim_accounts_for_blocks(self):
        cfg = FeatureConfig(statement_dims=8, step_dims=16)
        assert cfg.dim == 8 + 32 + N_POSITIONAL + N_OBSERVABLE
        cfg2 = FeatureConfig(statement_dims=8, step_dims=16, observable_channel=False)
        assert cfg2.dim == 8 + 32 + N_POSITIONAL

    def test_roundtrip(self):
        cfg = FeatureConfig(statement_dims=8, step_dims=16, hash_seed=3)
        assert FeatureConfig.from_dict(cfg.to_dict()) == cfg

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            FeatureConfig(statement_dims=0)
        with pytest.raises(InvalidInputError):
            FeatureConfig(ngram_max=0)


class TestExtractFeatures:
    def test_deterministic(self):
        cfg = FeatureConfig()
        steps = _steps(["step: check-ok @v1", "step: check-bad @v0"])
        a = extract_features(_problem(), steps, cfg)
        b = extract_features(_problem(), steps, cfg)
        assert np.array_equal(a, b)

    def test_positional_coordinates_differ_by_index(self):
        cfg = FeatureConfig(statement_dims=4, step_dims=8)
        one = extract_features(_problem(), _steps(["same text"]), cfg)
        two = extract_features(_problem(), _steps(["other", "same text"]), cfg)
        base = 4 + 16
        assert one[base] != two[base]
        assert one[base + 1] != two[base + 1]

    def test_differing_current_step_changes_vector(self, rng):
        # hashing collision check over 1000 random pairs
        cfg = FeatureConfig(statement_dims=16, step_dims=64)
        problem = _problem()
        differing = 0
        for _ in range(1000):
            base = [f"w{int(rng.integers(1000))} {int(rng.integers(1000))}" for _ in range(3)]
            other = list(base)
            other[-1] = f"q{int(rng.integers(1000))} {int(rng.integers(1000))} extra"
            a = extract_features(problem, _steps(base), cfg)
            b = extract_features(problem, _steps(other), cfg)
            differing += not np.array_equal(a, b)
        assert differing >= 995

    def test_matrix_rows_equal_per_prefix_extraction(self):
        problem, spec, sim = single_problem()
        solution = sim.complete(problem, [], ReasonerParams(n=1, seed=1))[0]
        from prmlab.reasoners import completion_to_solution

        sol = completion_to_solution(problem, [], solution, "sim-a")
        cfg = FeatureConfig()
        matrix = prefix_feature_matrix(problem, sol, cfg)
        assert matrix.shape == (len(sol.steps), cfg.dim)
        for i in range(len(sol.steps)):
            row = extract_features(problem, sol.steps[: i + 1], cfg)
            assert np.array_equal(matrix[i], row)

    def test_hashed_regions_are_l2_normalized(self):
        cfg = FeatureConfig(statement_dims=8, step_dims=16)
        vec = extract_features(_problem(), _steps(["alpha beta gamma", "delta epsilon"]), cfg)
        assert np.linalg.norm(vec[:8]) == pytest.approx(1.0)
        assert np.linalg.norm(vec[8:24]) == pytest.approx(1.0)
        assert np.linalg.norm(vec[24:40]) == pytest.approx(1.0)

    def test_hidden_channel_invisible_to_features(self):
        cfg = FeatureConfig()
        a = extract_features(_problem(), _steps(["step: check-ok @v1"]), cfg)
        b = extract_features(_problem(), _steps(["step: check-ok @v0"]), cfg)
        assert np.array_equal(a, b)

    def test_observable_channel_toggle(self):
        on = FeatureConfig(statement_dims=4, step_dims=8, observable_channel=True)
        vec = extract_features(_problem(), _steps(["step: check-bad @v0"]), on)
        assert vec[-2] == -1.0
        assert vec[-1] == -1.0
        vec_ok = extract_features(_problem(), _steps(["step: check-ok @v1", "step: check-bad @v0"]), on)
        assert vec_ok[-2] == -1.0
        assert vec_ok[-1] == 0.0  # mean of +1 and -1

    def test_requires_nonempty_prefix(self):
        with pytest.raises(InvalidInputError):
            extract_features(_problem(), [], FeatureConfig())

    def test_hash_seed_changes_layout(self):
        problem = _problem()
        steps = _steps(["alpha beta"])
        a = extract_features(problem, steps, FeatureConfig(hash_seed=1))
        b = extract_features(problem, steps, FeatureConfig(hash_seed=2))
        assert not np.array_equal(a, b)


@pytest.fixture
def rng():
    return np.random.default_rng(21)
