import math
from fractions import Fraction

import numpy as np
import pytest

from prmlab.aggregate import KINDS, AggregationSpec, aggregate, parse_aggregation_spec, rank_solutions, window
from prmlab.errors import InvalidInputError


def oracle_aggregate(values, kind):
    """Independent plain-Python evaluation of each aggregation formula."""
    n = len(values)
    if kind == "min":
        return min(values)
    if kind == "max":
        return max(values)
    if kind == "sum_logprob":
        return sum(math.log(p) for p in values)
    if kind == "mean_logprob":
        return sum(math.log(p) for p in values) / n
    if kind == "sum_prob":
        return sum(values)
    if kind == "mean_prob":
        return sum(values) / n
    if kind == "sum_logit":
        return sum(math.log(p / (1 - p)) for p in values)
    if kind == "mean_logit":
        return sum(math.log(p / (1 - p)) for p in values) / n
    if kind == "sum_odd":
        return sum(p / (1 - p) for p in values)
    if kind == "mean_odd":
        return sum(p / (1 - p) for p in values) / n
    raise AssertionError(kind)


class TestWindow:
    def test_last_k(self):
        assert window([0.1, 0.2, 0.3], AggregationSpec("min", last_k=2)).tolist() == [0.2, 0.3]

    def test_last_k_saturates(self):
        assert window([0.1, 0.2, 0.3], AggregationSpec("min", last_k=5)).tolist() == [0.1, 0.2, 0.3]

    def test_last_pct_ceiling_example(self):
        scores = list(np.linspace(0.1, 0.9, 11))
        assert len(window(scores, AggregationSpec("min", last_pct=10))) == 2

    def test_ceiling_rule_by_enumeration(self):
        # exact-rational oracle for the ceiling rule, n = 1..20
        for n in range(1, 21):
            scores = list(np.linspace(0.2, 0.8, n))
            for pct in (1, 5, 10, 25, 30, 33, 50, 66.5, 75, 99, 100):
                got = window(scores, AggregationSpec("min", last_pct=pct))
                expected = max(1, math.ceil(Fraction(str(pct)) * n / 100))
                assert len(got) == expected, (n, pct)
                assert got.tolist() == scores[-expected:]

    def test_degenerate_windows_equal_all(self, rng):
        for _ in range(30):
            scores = rng.uniform(0.01, 0.99, size=int(rng.integers(1, 12)))
            full = window(scores, AggregationSpec("min"))
            assert np.array_equal(window(scores, AggregationSpec("min", last_k=len(scores) + 3)), full)
            assert np.array_equal(window(scores, AggregationSpec("min", last_pct=100)), full)

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            window([], AggregationSpec("min"))


class TestAggregate:
    def test_sum_logit_at_half_is_zero(self):
        assert aggregate([0.5, 0.5], AggregationSpec("sum_logit")) == pytest.approx(0.0, abs=1e-15)

    def test_sum_logprob_hand_value(self):
        assert aggregate([0.9, 0.8], AggregationSpec("sum_logprob")) == pytest.approx(math.log(0.72), rel=1e-12)

    def test_mean_odd_hand_value(self):
        assert aggregate([0.9, 0.8], AggregationSpec("mean_odd")) == pytest.approx(6.5, rel=1e-12)

    def test_all_kinds_match_oracle(self, rng):
        for _ in range(1000):
            n = int(rng.integers(1, 30))
            values = rng.uniform(1e-6, 1 - 1e-6, size=n).tolist()
            for kind in KINDS:
                got = aggregate(values, AggregationSpec(kind))
                expected = oracle_aggregate(values, kind)
                assert abs(got - expected) <= 1e-12 * max(1.0, abs(expected), abs(got)), kind

    def test_out_of_range_scores_rejected(self):
        for bad in ([0.0, 0.5], [0.5, 1.0]):
            with pytest.raises(InvalidInputError):
                aggregate(bad, AggregationSpec("max"))

    def test_monotone_in_each_score(self, rng):
        # raising any single score never lowers the aggregate
        for _ in range(60):
            n = int(rng.integers(1, 10))
            values = rng.uniform(0.05, 0.9, size=n)
            i = int(rng.integers(n))
            bumped = values.copy()
            bumped[i] += rng.uniform(0.01, 0.99 - values[i])
            for kind in KINDS:
                spec = AggregationSpec(kind)
                assert aggregate(bumped, spec) >= aggregate(values, spec), kind

    def test_sum_logprob_penalizes_appended_step(self, rng):
        for _ in range(30):
            values = rng.uniform(0.05, 0.95, size=int(rng.integers(1, 8))).tolist()
            extended = values + [float(rng.uniform(0.05, 0.999))]
            spec = AggregationSpec("sum_logprob")
            assert aggregate(extended, spec) < aggregate(values, spec)


class TestRankSolutions:
    def test_singleton(self):
        assert rank_solutions([(None, [0.4])], AggregationSpec("max")) == 0

    def test_max_picks_higher(self):
        scored = [(None, [0.9]), (None, [0.8])]
        assert rank_solutions(scored, AggregationSpec("max")) == 0

    def test_tie_breaks_to_lowest_index(self):
        scored = [(None, [0.7, 0.7]), (None, [0.7, 0.7])]
        assert rank_solutions(scored, AggregationSpec("mean_prob")) == 0

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            rank_solutions([], AggregationSpec("max"))

    def test_sum_and_mean_agree_on_equal_lengths(self, rng):
        for _ in range(40):
            m = int(rng.integers(1, 7))
            scored = [(None, rng.uniform(0.05, 0.95, size=m)) for _ in range(5)]
            for base in ("logprob", "prob", "logit", "odd"):
                pick_sum = rank_solutions(scored, AggregationSpec(f"sum_{base}"))
                pick_mean = rank_solutions(scored, AggregationSpec(f"mean_{base}"))
                assert pick_sum == pick_mean, base

    def test_single_step_collapse(self, rng):
        # with one step every kind ranks identically to ranking by p_1
        for _ in range(40):
            scored = [(None, [float(p)]) for p in rng.uniform(0.01, 0.99, size=6)]
            by_p = max(range(6), key=lambda i: scored[i][1][0])
            for kind in KINDS:
                assert rank_solutions(scored, AggregationSpec(kind)) == by_p, kind


class TestSpecSyntax:
    def test_parse_plain(self):
        assert parse_aggregation_spec("sum_logit") == AggregationSpec("sum_logit")

    def test_parse_last_k(self):
        spec = parse_aggregation_spec("sum_logit@last_k=3")
        assert spec == AggregationSpec("sum_logit", last_k=3)
        assert spec.label() == "sum_logit@last_k=3"

    def test_parse_last_pct(self):
        spec = parse_aggregation_spec("mean_odd@last_pct=25")
        assert spec == AggregationSpec("mean_odd", last_pct=25.0)
        assert spec.label() == "mean_odd@last_pct=25"

    def test_parse_errors(self):
        for bad in ("nope", "max@last_k=0", "max@last_k=1.5", "max@last_pct=0", "max@last_pct=101", "max@first_k=2"):
            with pytest.raises(InvalidInputError):
                parse_aggregation_spec(bad)

    def test_both_windows_rejected(self):
        with pytest.raises(InvalidInputError):
            AggregationSpec("max", last_k=1, last_pct=50)


@pytest.fixture
def rng():
    return np.random.default_rng(99)
