"""Sparse process flexibility design (SPFD) harness.

Each demand scenario becomes one sparse UOT problem between plant supplies
and product demands, with profit turned into a nonnegative cost
``C = max(P) - P`` (then scaled to ``[0, 1]``). The per-scenario plans are
summed and the ``l`` edges with the largest ``P * sum(gamma)`` form the
topology. Mass is not re-optimized on that topology; the reported expected
profit is the scenario-averaged plan restricted to the chosen edges.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .geometry import KernelSpec, cost_matrix, gram_matrix, median_heuristic, normalize_cost
from .greedy import stochastic_omp
from .problem import ProblemInstance, SolverConfig


@dataclass(frozen=True)
class SpfdInstance:
    """Profit matrix ``P`` (plants x products), supplies, ``z`` demand samples and an edge budget ``l``.

    ``G1``/``G2`` are the Gram matrices used for the marginal penalties;
    they default to identities.
    """

    P: np.ndarray
    supplies: np.ndarray
    demand_samples: np.ndarray
    l: int
    G1: np.ndarray = field(default=None, repr=False)
    G2: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        mu = np.asarray(self.supplies, dtype=float).reshape(-1)
        nus = np.atleast_2d(np.asarray(self.demand_samples, dtype=float))
        if P.ndim != 2:
            raise InputError("profit matrix must be 2-D")
        m, n = P.shape
        if mu.size != m or nus.shape[1] != n:
            raise InputError(f"supplies/demands must have lengths {m} and {n}")
        for name, arr in (("profit", P), ("supplies", mu), ("demands", nus)):
            if not np.all(np.isfinite(arr)):
                raise InputError(f"{name} contain non-finite entries")
        if np.any(mu < 0) or np.any(nus < 0):
            raise InputError("supplies and demands must be nonnegative")
        if int(self.l) < 1:
            raise InputError("edge budget l must be at least 1")
        G1 = np.eye(m) if self.G1 is None else np.asarray(self.G1, dtype=float)
        G2 = np.eye(n) if self.G2 is None else np.asarray(self.G2, dtype=float)
        for k, v in (("P", P), ("supplies", mu), ("demand_samples", nus), ("l", int(self.l)), ("G1", G1), ("G2", G2)):
            object.__setattr__(self, k, v)

    @property
    def z(self) -> int:
        return self.demand_samples.shape[0]

    @property
    def shape(self):
        return self.P.shape

    @property
    def per_instance_budget(self) -> int:
        return self.l // self.z

    def with_budget(self, l):
        return SpfdInstance(self.P, self.supplies, self.demand_samples, l, self.G1, self.G2)


def generate_spfd(m=10, n=10, z=5, l=10, seed=0, demand_cv=0.3, sigma2=None) -> SpfdInstance:
    """Fixed-seed synthetic network.

    Plants and products sit uniformly in the unit square; product prices are
    uniform on ``[2, 3]`` and ``P_ij = price_j - ||plant_i - product_j||`` (so
    every edge is profitable). Supplies are uniform ``1/m``. Each demand
    sample draws ``|N(1, demand_cv^2)|`` per product and is normalized to
    total mass one. Marginal penalties use RBF Gram matrices on the
    locations (median bandwidth unless ``sigma2`` is given).
    """
    rng = np.random.default_rng(seed)
    plants = rng.uniform(size=(m, 2))
    products = rng.uniform(size=(n, 2))
    price = rng.uniform(2.0, 3.0, size=n)
    dist = np.sqrt(cost_matrix("sqeuclidean", plants, products, normalize=False))
    P = price[None, :] - dist
    demands = np.abs(rng.normal(1.0, demand_cv, size=(z, n)))
    demands /= demands.sum(axis=1, keepdims=True)
    kernel = KernelSpec("rbf", median_heuristic(plants, products) if sigma2 is None else sigma2)
    return SpfdInstance(P, np.full(m, 1.0 / m), demands, l,
                        gram_matrix(kernel, plants).entries, gram_matrix(kernel, products).entries)


@dataclass
class SpfdResult:
    edges: list              # [(i, j)] in decreasing score order
    scores: list             # P_ij * Gamma_ij for each edge
    expected_profit: float
    aggregate: np.ndarray = field(repr=False)
    plans: list = field(repr=False)
    budget: int = 0

    def report(self):
        return {
            "edges": [list(e) for e in self.edges],
            "scores": self.scores,
            "expected_profit": self.expected_profit,
            "per_instance_budget": self.budget,
            "per_instance_nnz": [int(p.nnz()) for p in self.plans],
            "reoptimized": False,
        }


def cost_from_profit(P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    return normalize_cost(P.max() - P)


def top_edges(scores, l, carries_mass=None):
    """Linear indices of the ``l`` best edges.

    Edges that carry mass rank ahead of those that do not (a negative-profit
    edge in use still beats an unused one); then by score, then by lowest index.
    """
    flat = np.asarray(scores, dtype=float).reshape(-1)
    used = np.ones(flat.size, bool) if carries_mass is None else np.asarray(carries_mass).reshape(-1)
    return np.lexsort((np.arange(flat.size), -flat, ~used))[:l]


def solve_spfd(inst: SpfdInstance, lambda1=1.0, lambda2=0.0, config: SolverConfig | None = None) -> SpfdResult:
    config = config or SolverConfig()
    K = inst.per_instance_budget
    if K < 1:
        raise InputError(f"per-instance budget floor(l/z) = floor({inst.l}/{inst.z}) is zero")
    m, n = inst.shape
    K = min(K, m * n)
    C = cost_from_profit(inst.P)
    plans = []
    base = np.random.SeedSequence(config.seed)
    for i in range(inst.z):
        seed_i = int(np.random.SeedSequence(base.entropy, spawn_key=(i,)).generate_state(1)[0])
        sub = ProblemInstance(C, inst.G1, inst.G2, inst.supplies, inst.demand_samples[i], lambda1, lambda2)
        cfg = dataclasses.replace(config, seed=seed_i)
        plans.append(stochastic_omp(sub, K, cfg).plan)
    gamma_sum = sum(p.dense() for p in plans)
    score = inst.P * gamma_sum
    chosen = top_edges(score, inst.l, carries_mass=gamma_sum > config.support_tol)
    mean_plan = gamma_sum.reshape(-1) / inst.z
    profit = float(np.sum(inst.P.reshape(-1)[chosen] * mean_plan[chosen]))
    return SpfdResult(
        edges=[divmod(int(u), n) for u in chosen],
        scores=[float(score.reshape(-1)[u]) for u in chosen],
        expected_profit=profit,
        aggregate=gamma_sum,
        plans=plans,
        budget=K,
    )
