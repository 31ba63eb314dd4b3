import json
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from _instances import random_instance
from sparse_uot.duality import (
    dual_certificate,
    dual_objective,
    duality_gap,
    primal_objective,
    sparse_conjugate,
)
from sparse_uot.errors import CertificateUnavailable, InfeasiblePlanError, InputError, NumericalError
from sparse_uot.greedy import matroid_omp
from sparse_uot.matroid import MatroidConstraint
from sparse_uot.problem import ProblemInstance, SparsePlan, SupportSet, objective


def conjugate_oracle(w, K, lam2):
    best = 0.0
    for k in range(K + 1):
        for T in combinations(range(len(w)), k):
            # per coordinate: max_z>=0 w z - lam2/2 z^2 = max(w,0)^2 / (2 lam2)
            best = max(best, sum(max(w[i], 0.0) ** 2 for i in T) / (2 * lam2))
    return best


def test_conjugate_example():
    res = sparse_conjugate([3.0, 1.0, -2.0], 2, 1.0)
    assert res.value == 5.0
    assert res.maximizer.tolist() == [3.0, 1.0, 0.0]


def test_conjugate_nonpositive_input():
    res = sparse_conjugate([-1.0, 0.0, -3.0], 2, 0.5)
    assert res.value == 0.0 and not res.maximizer.any()


def test_conjugate_vacuous_budget_is_plain_nonnegative_conjugate():
    w = np.array([0.4, -1.0, 2.0, 0.0])
    res = sparse_conjugate(w, 4, 2.0)
    assert np.array_equal(res.maximizer, np.maximum(w, 0) / 2.0)


def test_conjugate_tie_break_keeps_lowest_index():
    assert sparse_conjugate([1.0, 1.0, 1.0], 1, 1.0).maximizer.tolist() == [1.0, 0.0, 0.0]


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 6, elements=st.floats(-3, 3, allow_nan=False)), st.integers(1, 6),
       st.floats(0.05, 5.0))
def test_conjugate_matches_enumeration(w, K, lam2):
    res = sparse_conjugate(w, K, lam2)
    assert abs(res.value - conjugate_oracle(w, K, lam2)) <= 1e-12
    z = res.maximizer
    assert np.count_nonzero(z) <= K and np.all(z >= 0)
    assert w @ z - lam2 / 2 * z @ z == pytest.approx(res.value, abs=1e-12)


def test_conjugate_input_checks():
    with pytest.raises(InputError):
        sparse_conjugate([1.0], 1, 0.0)
    with pytest.raises(InputError):
        sparse_conjugate([1.0, 2.0], 3, 1.0)


def scalar_instance(lambda2=0.5):
    return ProblemInstance([[0.5]], [[1.0]], [[1.0]], [1.0], [1.0], lambda1=1.0, lambda2=lambda2)


def test_primal_examples():
    rng = np.random.default_rng(0)
    inst = random_instance(rng, 3, 3, lambda2=0.3)
    plan = SparsePlan(SupportSet([(0, 0), (1, 0), (2, 2)], (3, 3)), [0.1, 0.2, 0.3])
    p = primal_objective(inst, plan, 2)
    assert p.feasible and abs(p.value - objective(inst, plan)) <= 1e-12
    bad = primal_objective(inst, plan, 1)
    assert not bad.feasible and bad.violating_column == 0
    assert primal_objective(inst, SparsePlan.zeros((3, 3)), 1).value == pytest.approx(inst.const0)


def test_entries_below_support_tol_do_not_count_against_the_budget():
    inst = ProblemInstance(np.ones((2, 1)), np.eye(2), [[1.0]], [0.5, 0.5], [1.0], 1.0, 0.5)
    plan = SparsePlan(SupportSet([(0, 0), (1, 0)], (2, 1)), [0.3, 1e-15])
    assert primal_objective(inst, plan, 1).feasible


def test_dual_examples():
    rng = np.random.default_rng(1)
    inst = random_instance(rng, 3, 4, lambda2=0.2)
    assert dual_objective(inst, np.zeros(3), np.zeros(4), 2) == 0.0
    assert dual_objective(scalar_instance(), [0.0], [0.0], 1) == 0.0


def test_dual_certificate_examples():
    inst = scalar_instance()
    alpha, beta = dual_certificate(inst, SparsePlan(SupportSet([(0, 0)], (1, 1)), [0.875]))
    assert alpha.tolist() == pytest.approx([0.25]) and beta.tolist() == pytest.approx([0.25])
    rng = np.random.default_rng(2)
    inst = random_instance(rng, 3, 2, lambda1=0.7, lambda2=0.2)
    a0, b0 = dual_certificate(inst, SparsePlan.zeros(inst.shape))
    assert np.allclose(a0, 2 * 0.7 * inst.a) and np.allclose(b0, 2 * 0.7 * inst.b)
    # a plan with exact marginals
    gamma = np.outer(inst.mu, inst.nu) / inst.nu.sum()
    a1, b1 = dual_certificate(inst, SparsePlan.from_dense(gamma))
    assert np.allclose(a1, 0, atol=1e-14) and np.allclose(b1, 0, atol=1e-14)


@pytest.mark.parametrize("seed", range(8))
def test_weak_duality_on_random_pairs(seed):
    rng = np.random.default_rng(seed)
    m, n = 4, 3
    inst = random_instance(rng, m, n, lambda1=float(rng.uniform(0.1, 5)), lambda2=float(rng.uniform(0.05, 2)))
    K2 = int(rng.integers(1, m + 1))
    for _ in range(10):
        gamma = rng.uniform(0, 0.5, size=(m, n))
        for j in range(n):
            gamma[rng.permutation(m)[K2:], j] = 0.0
        p = primal_objective(inst, SparsePlan.from_dense(gamma), K2)
        alpha, beta = rng.normal(size=m), rng.normal(size=n)
        assert p.feasible
        assert p.value - dual_objective(inst, alpha, beta, K2) >= -1e-9
        assert duality_gap(inst, SparsePlan.from_dense(gamma), K2).gap >= -1e-9


def test_zero_plan_has_positive_gap():
    rng = np.random.default_rng(4)
    inst = random_instance(rng, 3, 3, lambda2=0.5)
    assert duality_gap(inst, SparsePlan.zeros(inst.shape), 2).gap > 1e-6


@pytest.mark.parametrize("lam1,lam2", [(0.1, 0.1), (1.0, 0.1), (10.0, 1.0)])
def test_vacuous_budget_closes_the_gap(lam1, lam2):
    rng = np.random.default_rng(5)
    inst = random_instance(rng, 4, 4, lambda1=lam1, lambda2=lam2)
    plan = matroid_omp(inst, MatroidConstraint.partition(4, 4, 4)).plan
    cert = duality_gap(inst, plan, 4)
    assert -1e-9 <= cert.gap <= 1e-6
    d = json.loads(cert.to_json())
    assert list(d) == ["primal", "dual", "gap", "alpha", "beta", "feasible"]


def test_certificates_refuse_lambda2_zero_and_infeasible_plans():
    inst = scalar_instance(lambda2=0.0)
    plan = SparsePlan(SupportSet([(0, 0)], (1, 1)), [0.5])
    with pytest.raises(CertificateUnavailable):
        duality_gap(inst, plan, 1)
    inst2 = ProblemInstance(np.ones((2, 1)), np.eye(2), [[1.0]], [0.5, 0.5], [1.0], 1.0, 0.5)
    with pytest.raises(InfeasiblePlanError) as err:
        duality_gap(inst2, SparsePlan.from_dense([[0.2], [0.3]]), 1)
    assert (err.value.column, err.value.count, err.value.budget) == (0, 2, 1)


def test_singular_gram_is_regularized_by_jitter():
    # duplicate points: rank-one Gram, factorizable only after adding jitter
    inst = ProblemInstance(np.ones((2, 1)), np.ones((2, 2)), [[1.0]], [0.5, 0.5], [1.0], 1.0, 0.5)
    assert np.isfinite(dual_objective(inst, [0.1, 0.1], [0.0], 1))


def test_indefinite_gram_raises_numerical_error():
    with pytest.raises(NumericalError):
        bad = ProblemInstance(np.ones((2, 1)), [[0.0, 0.0], [0.0, -1.0]], [[1.0]], [0.5, 0.5], [1.0], 1.0, 0.5)
        dual_objective(bad, [0.1, 0.1], [0.0], 1)
