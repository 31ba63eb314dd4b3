"""Greedy support selection: classical greedy, OMP, stochastic OMP and matroid OMP.

All four maximize ``F(S) = U(0) - min_{supp(gamma) in S} U(gamma)``. Each
iteration adds one element to the support and re-solves the restricted
problem, warm-started from the previous plan extended by a zero.

Randomness
----------
Iteration ``i`` (0-based) of a run with seed ``s`` draws from
``numpy.random.default_rng(SeedSequence(s, spawn_key=(i,)))``, so a trace
depends only on the seed and never on how candidate scoring is scheduled.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InputError
from .matroid import MatroidConstraint, best_base_of_contraction, is_independent
from .problem import (
    ProblemInstance,
    SetFunction,
    SolverConfig,
    SparsePlan,
    SupportSet,
    _gradient_linear,
)

log = logging.getLogger(__name__)


@dataclass
class IterationRecord:
    element: tuple
    n_candidates: int
    F: float
    objective: float
    inner_iterations: int
    solves: int
    converged: bool
    queried: np.ndarray = field(repr=False, default=None)


@dataclass
class GreedyTrace:
    algorithm: str
    records: list = field(default_factory=list)
    support: SupportSet = None
    plan: SparsePlan = None
    stopped_early: bool = False

    @property
    def F_values(self):
        return [r.F for r in self.records]

    @property
    def solves(self):
        return sum(r.solves for r in self.records)

    @property
    def converged(self):
        return all(r.converged for r in self.records)

    def summary(self):
        return {
            "algorithm": self.algorithm,
            "iterations": len(self.records),
            "solver_calls": self.solves,
            "inner_iterations": sum(r.inner_iterations for r in self.records),
            "all_converged": self.converged,
            "stopped_early": self.stopped_early,
            "steps": [
                {"element": list(r.element), "candidates": r.n_candidates, "F": r.F, "objective": r.objective}
                for r in self.records
            ],
        }


class GreedyResult(NamedTuple):
    support: SupportSet
    plan: SparsePlan
    trace: GreedyTrace


def iteration_rng(seed, i):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(i),)))


def sample_size(m, n, K, epsilon):
    """Candidate-set size ``ceil(m n / K * log(1/epsilon))`` before capping."""
    return int(math.ceil(m * n / K * math.log(1.0 / epsilon)))


def _check_K(instance, K):
    m, n = instance.shape
    if not 1 <= K <= m * n:
        raise InputError(f"sparsity K={K} must lie in [1, {m * n}]")


def _argmax_lowest(values, index):
    """Position of the max of ``values``; ties go to the smallest ``index``."""
    best = values.max()
    hits = np.flatnonzero(values == best)
    return hits[np.argmin(index[hits])]


def _finish(trace, support, plan, config):
    trace.support = support
    trace.plan = plan
    if not trace.converged:
        log.warning("%s: some restricted solves hit max_iter=%d", trace.algorithm, config.max_iter)
    return GreedyResult(support, plan, trace)


def classical_greedy(instance: ProblemInstance, K: int, config: SolverConfig | None = None) -> GreedyResult:
    """Add the element with the largest marginal gain ``F(S + e) - F(S)`` each round.

    Needs one restricted solve per remaining element per round.
    """
    config = config or SolverConfig()
    _check_K(instance, K)
    F = SetFunction(instance, config)
    support = SupportSet((), instance.shape)
    sol = F.solve(support)
    f_cur = 0.0
    trace = GreedyTrace("classical")
    for _ in range(K):
        before_solves, before_iters = F.solves, F.inner_iterations
        rest = support.complement()
        best = None
        for lin in rest.tolist():
            cand_support = support.add(lin)
            cand = F.solve(cand_support, sol.plan.extend(lin))
            gain = F.value_of(cand) - f_cur
            if best is None or gain > best[0]:
                best = (gain, lin, cand_support, cand)
        _, lin, support, sol = best
        f_cur = F.value_of(sol)
        trace.records.append(IterationRecord(
            support.pair(lin), int(rest.size), f_cur, sol.value,
            F.inner_iterations - before_iters, F.solves - before_solves, sol.converged,
        ))
        F.clear()
    return _finish(trace, support, sol.plan, config)


def _omp(instance, K, config, name, candidate_fn):
    F = SetFunction(instance, config)
    support = SupportSet((), instance.shape)
    sol = F.solve(support)
    trace = GreedyTrace(name)
    for i in range(K):
        cand = candidate_fn(i, support)
        g = -_gradient_linear(instance, sol.plan, cand)
        if config.early_stop and g.max() <= config.support_tol:
            trace.stopped_early = True
            break
        lin = int(cand[_argmax_lowest(g, cand)])
        before_solves, before_iters = F.solves, F.inner_iterations
        support = support.add(lin)
        sol = F.solve(support, sol.plan.extend(lin))
        trace.records.append(IterationRecord(
            support.pair(lin), int(cand.size), F.value_of(sol), sol.value,
            F.inner_iterations - before_iters, F.solves - before_solves, sol.converged, cand,
        ))
    F.clear()
    return _finish(trace, support, sol.plan, config)


def omp_greedy(instance: ProblemInstance, K: int, config: SolverConfig | None = None) -> GreedyResult:
    """Orthogonal matching pursuit: add ``argmax_e -dU/dgamma_e`` over all of ``V \\ S``."""
    config = config or SolverConfig()
    _check_K(instance, K)
    return _omp(instance, K, config, "omp", lambda i, S: S.complement())


def stochastic_omp(instance: ProblemInstance, K: int, config: SolverConfig | None = None) -> GreedyResult:
    """OMP with the argmax restricted to a random subset of ``V \\ S``.

    The subset is drawn uniformly without replacement with
    ``min(ceil(m n / K log(1/epsilon)), |V \\ S|)`` elements; gradients are
    evaluated on that subset only.
    """
    config = config or SolverConfig()
    _check_K(instance, K)
    m, n = instance.shape
    size = sample_size(m, n, K, config.epsilon)

    def candidates(i, S):
        rest = S.complement()
        if size >= rest.size:
            return rest
        picked = iteration_rng(config.seed, i).choice(rest.size, size=size, replace=False)
        return rest[np.sort(picked)]

    return _omp(instance, K, config, "stochastic-omp", candidates)


def matroid_omp(instance: ProblemInstance, matroid: MatroidConstraint, config: SolverConfig | None = None,
                pick: str = "random") -> GreedyResult:
    """OMP under a matroid: pick from the best base of the contraction by the current support.

    Runs ``matroid.rank`` rounds. Each round scores only elements that can
    still be added, builds the base maximizing the sum of ``max(0, g)``, and
    adds a uniformly random member of it. ``pick="max"`` instead takes the
    base member with the largest raw score (ties to the lowest index), which
    makes the run deterministic.
    """
    config = config or SolverConfig()
    if matroid.shape != instance.shape:
        raise InputError(f"matroid ground {matroid.shape} does not match instance {instance.shape}")
    if pick not in ("random", "max"):
        raise InputError(f"unknown pick rule {pick!r}")
    F = SetFunction(instance, config)
    support = SupportSet((), instance.shape)
    sol = F.solve(support)
    trace = GreedyTrace("matroid-omp")
    scores = np.full(instance.m * instance.n, np.nan)
    for i in range(matroid.rank):
        cand = matroid.candidates(support)
        g = -_gradient_linear(instance, sol.plan, cand)
        if config.early_stop and g.max() <= config.support_tol:
            trace.stopped_early = True
            break
        scores[:] = np.nan
        scores[cand] = g
        base = best_base_of_contraction(matroid, support, scores)
        members = np.sort(base.linear)
        if pick == "random":
            lin = int(members[iteration_rng(config.seed, i).integers(members.size)])
        else:
            lin = int(members[_argmax_lowest(scores[members], members)])
        before_solves, before_iters = F.solves, F.inner_iterations
        support = support.add(lin)
        sol = F.solve(support, sol.plan.extend(lin))
        trace.records.append(IterationRecord(
            support.pair(lin), int(cand.size), F.value_of(sol), sol.value,
            F.inner_iterations - before_iters, F.solves - before_solves, sol.converged, cand,
        ))
    F.clear()
    if not is_independent(matroid, support):
        raise AssertionError("matroid OMP produced a dependent support")
    return _finish(trace, support, sol.plan, config)


ALGORITHMS = ("classical", "omp", "stochastic-omp", "matroid-omp")


def run_algorithm(name, instance, config, K=None, K2=None, pick="random") -> GreedyResult:
    """Dispatch by algorithm name; ``matroid-omp`` uses a partition matroid when ``K2`` is given."""
    if name == "matroid-omp":
        if K2 is not None:
            mat = MatroidConstraint.partition(K2, *instance.shape)
        elif K is not None:
            mat = MatroidConstraint.uniform(K, *instance.shape)
        else:
            raise InputError("matroid-omp needs --k or --k-per-column")
        return matroid_omp(instance, mat, config, pick=pick)
    if K is None:
        raise InputError(f"algorithm {name!r} needs a global sparsity --k")
    if name == "classical":
        return classical_greedy(instance, K, config)
    if name == "omp":
        return omp_greedy(instance, K, config)
    if name == "stochastic-omp":
        return stochastic_omp(instance, K, config)
    raise InputError(f"unknown algorithm {name!r}; expected one of {ALGORITHMS}")
