"""Shared helpers for building small simulator scenarios."""

from __future__ import annotations

import numpy as np
import pytest

from prmlab import (
    AnnotationParams,
    SimSpec,
    SimulatedReasoner,
    build_annotation_dataset,
    build_pool,
    make_problem_suite,
)
from prmlab.core import GradingSpec, Problem


def suite(n_vt=10, n_test=10, seed=0, **kw):
    kw.setdefault("chain_length", (4, 5))
    kw.setdefault("error_rate", (0.15, 0.15))
    problems, specs = make_problem_suite(n_vt, n_test, seed=seed, **kw)
    return problems, specs, SimulatedReasoner(specs, "sim-a")


def split(problems, name):
    return [p for p in problems if p.split == name]


def single_problem(chain_length=4, error_rates=None, reference=7, **kw):
    spec = SimSpec(
        chain_length=chain_length,
        error_rates=tuple(error_rates if error_rates is not None else [0.2] * chain_length),
        **kw,
    )
    problem = Problem(
        id="p-solo",
        statement="task 0: trace the ledger balance and report the final value",
        grading=GradingSpec.numeric(reference),
        split="test",
    )
    return problem, spec, SimulatedReasoner({problem.id: spec}, "sim-a")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_dataset(seed=0, n_vt=12, n_test=4, n_g=4, n_mc=6, **suite_kw):
    problems, specs, sim = suite(n_vt=n_vt, n_test=n_test, seed=seed, **suite_kw)
    train_problems = split(problems, "verify_train")
    params = AnnotationParams(n_g=n_g, n_mc=n_mc, reasoner_g="sim-a", reasoner_mc="sim-a")
    dataset = build_annotation_dataset(sim, sim, train_problems, params, seed=seed + 1)
    return problems, specs, sim, train_problems, dataset


def small_pool(sim, problems, n=8, seed=5):
    return build_pool(sim, problems, n, 0.7, seed=seed)
