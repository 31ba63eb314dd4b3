"""Acceptance criteria 1-10. Each test prints one PASS/FAIL line.

Run directly (``python tests/test_acceptance.py``) or through pytest.
"""

import math
import sys
import time
from itertools import combinations

import numpy as np
import pytest

from _instances import CERTIFIED, KERNELS, all_supports, cloud_instance, dense_objective, pgd_oracle, random_instance
from sparse_uot import cli, io
from sparse_uot.duality import duality_gap, sparse_conjugate
from sparse_uot.flow import FlowConfig, gradient_flow, two_cluster_toy
from sparse_uot.greedy import matroid_omp, omp_greedy, stochastic_omp
from sparse_uot.matroid import MatroidConstraint, is_independent
from sparse_uot.problem import (
    SetFunction,
    SolverConfig,
    SparsePlan,
    SupportSet,
    curvature,
    gradient,
    kkt_residual,
    objective,
    set_function_F,
    solve_restricted,
)
from sparse_uot.spfd import generate_spfd, solve_spfd


@pytest.fixture
def report(capsys):
    def _report(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} {detail}".rstrip())
        assert ok, f"criterion {number} failed: {detail}"
    return _report


def test_criterion_01_gradient_matches_finite_differences(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    h = 1e-6
    for k in range(20):
        m, n = rng.integers(1, 7, size=2)
        inst = random_instance(rng, int(m), int(n), KERNELS[k % 3], lambda1=float(rng.uniform(0.1, 5)),
                               lambda2=(0.0, 0.1)[k % 2])
        gamma = rng.uniform(0.01, 1.0, size=inst.shape)
        full = SupportSet.full(inst.shape)
        plan = SparsePlan.from_dense(gamma)
        g = gradient(inst, plan, full).reshape(inst.shape)
        for i in range(inst.m):
            for j in range(inst.n):
                e = np.zeros(inst.shape)
                e[i, j] = h
                fd = (dense_objective(inst, gamma + e) - dense_objective(inst, gamma - e)) / (2 * h)
                worst = max(worst, abs(g[i, j] - fd) / max(abs(fd), 1.0))
    elapsed = time.perf_counter() - t0
    report(1, "gradient vs central differences", worst <= 1e-6 and elapsed < 5,
           f"(max rel err {worst:.2e}, {elapsed:.2f}s)")


def test_criterion_02_restricted_solver_optimality(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    inst = random_instance(rng, 5, 5, "rbf", lambda1=1.0, lambda2=0.0)
    worst_kkt = worst_gap = 0.0
    for _ in range(10):
        size = int(rng.integers(1, 26))
        S = SupportSet.from_linear(np.sort(rng.choice(25, size=size, replace=False)), inst.shape)
        sol = solve_restricted(inst, S)
        g = gradient(inst, sol.plan, S)
        worst_kkt = max(worst_kkt, kkt_residual(sol.plan.values, g))
        mask = np.zeros(inst.shape)
        mask[S.rows, S.cols] = 1.0
        _, ref = pgd_oracle(inst, mask)
        worst_gap = max(worst_gap, abs(sol.value - ref))
    elapsed = time.perf_counter() - t0
    report(2, "restricted solver KKT and PGD oracle", worst_kkt <= 1e-6 and worst_gap <= 1e-8 and elapsed < 30,
           f"(max KKT {worst_kkt:.2e}, max |U - U_pgd| {worst_gap:.2e}, {elapsed:.1f}s)")


def _curvature_instance():
    return cloud_instance(3, 3, seed=0, **CERTIFIED)


def test_criterion_03_weak_submodularity(report):
    t0 = time.perf_counter()
    inst = _curvature_instance()
    cur = curvature(inst, K=2)
    F = SetFunction(inst)
    V = range(9)

    def f(elems):
        return F(SupportSet.from_linear(sorted(elems), inst.shape))

    neg = mono = ratio_viol = 0
    for s in range(5):
        for S in combinations(V, s):
            fS = f(S)
            neg += fS < -1e-9
            rest = [u for u in V if u not in S]
            gains = {u: f(S + (u,)) - fS for u in rest}
            mono += sum(gn < -1e-9 for gn in gains.values())
            for a in range(1, 5 - s):
                for A in combinations(rest, a):
                    if sum(gains[u] for u in A) < cur.alpha_lower * (f(S + A) - fS) - 1e-9:
                        ratio_viol += 1
    elapsed = time.perf_counter() - t0
    ok = cur.certified and neg == 0 and mono == 0 and ratio_viol == 0 and elapsed < 60
    report(3, "F nonnegative, monotone, weakly submodular", ok,
           f"(alpha_lower {cur.alpha_lower:.3f}, violations {neg}/{mono}/{ratio_viol}, {elapsed:.1f}s)")


def test_criterion_04_curvature_bounds(report):
    inst = _curvature_instance()
    cur = curvature(inst, K=2)
    F = SetFunction(inst)
    V = range(9)
    lower_viol = upper_viol = 0
    for s in range(4):
        for S in combinations(V, s):
            support = SupportSet.from_linear(sorted(S), inst.shape)
            sol = F.solve(support)
            fS = F.value_of(sol)
            rest = [u for u in V if u not in S]
            gplus = dict(zip(rest, np.maximum(-gradient(inst, sol.plan, rest), 0.0)))
            for u in rest:
                if F(support.add(u)) - fS < gplus[u] ** 2 / (2 * cur.U_tilde1) - 1e-9:
                    lower_viol += 1
            for a in (1, 2):
                for A in combinations(rest, a):
                    gain = F(SupportSet.from_linear(sorted(S + A), inst.shape)) - fS
                    if gain > sum(gplus[u] ** 2 for u in A) / (2 * cur.u_lower) + 1e-9:
                        upper_viol += 1
    report(4, "marginal-gain bounds from the gradient", lower_viol == 0 and upper_viol == 0,
           f"(lower-bound violations {lower_viol}, upper-bound violations {upper_viol})")


def test_criterion_05_cardinality_guarantee(report):
    t0 = time.perf_counter()
    inst = _curvature_instance()
    eps = 0.01
    lines = []
    ok = True
    for K in (1, 2):
        alpha = curvature(inst, K).alpha_lower
        opt = max(set_function_F(inst, S) for S in all_supports(inst.shape, K))
        vals = [SetFunction(inst)(stochastic_omp(inst, K, SolverConfig(seed=s, epsilon=eps)).support)
                for s in range(50)]
        mean = float(np.mean(vals))
        bound = (1 - math.exp(-alpha) - eps) * opt - 0.02 * opt
        f_omp = SetFunction(inst)(omp_greedy(inst, K).support)
        omp_bound = (1 - math.exp(-alpha)) * opt
        ok &= mean >= bound and f_omp >= omp_bound
        lines.append(f"K={K}: mean {mean:.4g} >= {bound:.4g}, OMP {f_omp:.4g} >= {omp_bound:.4g}")
    elapsed = time.perf_counter() - t0
    report(5, "stochastic/vanilla OMP approximation", ok and elapsed < 120, f"({'; '.join(lines)}; {elapsed:.1f}s)")


def test_criterion_06_matroid_guarantee(report):
    inst = cloud_instance(2, 2, seed=1, **CERTIFIED)
    cur = curvature(inst, K=2)
    mat = MatroidConstraint.partition(1, 2, 2)
    F = SetFunction(inst)
    bases = [SupportSet([(r0, 0), (r1, 1)], (2, 2)) for r0 in range(2) for r1 in range(2)]
    opt = max(F(B) for B in bases)
    runs = [matroid_omp(inst, mat, SolverConfig(seed=s)) for s in range(30)]
    indep = all(is_independent(mat, r.support) for r in runs)
    mean = float(np.mean([F(r.support) for r in runs]))
    bound = (1 + cur.U_tilde1 / cur.u_lower) ** -2 * opt - 0.02 * opt
    report(6, "matroid OMP approximation", indep and mean >= bound,
           f"(mean {mean:.4g} >= {bound:.4g}, OPT {opt:.4g}, all independent {indep})")


def test_criterion_07_duality(report):
    rng = np.random.default_rng(707)
    min_gap = math.inf
    max_vacuous = 0.0
    for trial in range(6):
        m, n = int(rng.integers(2, 6)), int(rng.integers(2, 6))
        inst = random_instance(rng, m, n, KERNELS[trial % 3], lambda1=(0.1, 1.0, 10.0)[trial % 3],
                               lambda2=(0.1, 1.0)[trial % 2])
        for K2 in range(1, m + 1):
            plan = matroid_omp(inst, MatroidConstraint.partition(K2, m, n), SolverConfig(seed=trial)).plan
            gap = duality_gap(inst, plan, K2).gap
            min_gap = min(min_gap, gap)
            if K2 == m:
                max_vacuous = max(max_vacuous, gap)
        # arbitrary feasible plans as well
        for _ in range(5):
            gamma = rng.uniform(0, 0.3, size=(m, n)) * (rng.uniform(size=(m, n)) < 0.5)
            min_gap = min(min_gap, duality_gap(inst, SparsePlan.from_dense(gamma), m).gap)
    conj_err = 0.0
    for _ in range(100):
        w = rng.normal(size=6)
        K = int(rng.integers(1, 7))
        l2 = float(rng.uniform(0.1, 2.0))
        oracle = max(sum(max(w[i], 0.0) ** 2 for i in T) / (2 * l2)
                     for k in range(K + 1) for T in combinations(range(6), k))
        conj_err = max(conj_err, abs(sparse_conjugate(w, K, l2).value - oracle))
    ok = min_gap >= -1e-9 and max_vacuous <= 1e-6 and conj_err <= 1e-12
    report(7, "weak duality, vacuous-budget gap, conjugate oracle", ok,
           f"(min gap {min_gap:.2e}, max gap at K2=m {max_vacuous:.2e}, conjugate err {conj_err:.1e})")


def test_criterion_08_spfd_trend(report):
    t0 = time.perf_counter()
    profits = [solve_spfd(generate_spfd(10, 10, z=5, l=l, seed=0)).expected_profit for l in (10, 18, 25)]
    elapsed = time.perf_counter() - t0
    ok = all(b >= a for a, b in zip(profits, profits[1:])) and elapsed < 120
    report(8, "SPFD profit non-decreasing in l", ok,
           f"(profits {', '.join(f'{p:.4f}' for p in profits)}; {elapsed:.1f}s)")


def test_criterion_09_gradient_flow(report):
    src, tgt = two_cluster_toy(20, seed=0)
    traj = gradient_flow(src, tgt, FlowConfig(learning_rate=0.01, iterations=200))
    ratio = traj.mmd2[-1] / traj.mmd2[0]
    report(9, "gradient flow halves squared MMD", len(traj.mmd2) == 201 and ratio <= 0.5,
           f"(MMD^2 {traj.mmd2[0]:.4g} -> {traj.mmd2[-1]:.4g}, ratio {ratio:.4f})")


def test_criterion_10_determinism_and_round_trip(report, tmp_path):
    rng = np.random.default_rng(10)
    io.write_matrix(tmp_path / "src.csv", rng.normal(size=(6, 2)))
    io.write_matrix(tmp_path / "tgt.csv", rng.normal(size=(5, 2)))
    identical = True
    for algo, extra in (("stochastic-omp", ["--k", "8"]), ("matroid-omp", ["--k-per-column", "2"])):
        outs = []
        for run in range(2):
            out = tmp_path / f"{algo}-{run}.csv"
            rc = cli.main(["plan", "--source", str(tmp_path / "src.csv"), "--target", str(tmp_path / "tgt.csv"),
                           "--algorithm", algo, *extra, "--seed", "7", "--out", str(out)])
            identical &= rc == 0
            outs.append(out.read_bytes())
        identical &= outs[0] == outs[1]
    cfg, _ = cli.resolve_config({"source": str(tmp_path / "src.csv"), "target": str(tmp_path / "tgt.csv")})
    inst, _ = cli.build_instance(cfg)
    plan = stochastic_omp(inst, 8, SolverConfig(seed=3)).plan
    io.write_coo(tmp_path / "plan.csv", plan)
    back = io.read_coo(tmp_path / "plan.csv", inst.shape)
    dF = abs(set_function_F(inst, plan.pruned().support) - set_function_F(inst, back.support))
    dU = abs(objective(inst, plan) - objective(inst, back))
    report(10, "byte-identical seeded plans, COO round trip", identical and dF <= 1e-12 and dU <= 1e-12,
           f"(identical {identical}, |dF| {dF:.1e}, |dU| {dU:.1e})")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
