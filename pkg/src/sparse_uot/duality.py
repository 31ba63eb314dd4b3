"""Duality-gap certificates for the column-sparse problem.

Primal (per-column budget ``K2``, ``lambda2 > 0``)::

    P(gamma) = <C, gamma> + sum_j Theta(gamma_j) + lambda1 (||gamma 1 - mu||^2_G1 + ||gamma^T 1 - nu||^2_G2)
    Theta(z) = lambda2/2 ||z||^2 + indicator{z >= 0, ||z||_0 <= K2}

Dual::

    D(alpha, beta) = <alpha, mu> + <beta, nu> - alpha^T G1^{-1} alpha / (4 lambda1)
                     - beta^T G2^{-1} beta / (4 lambda1) - sum_j Theta*(alpha + beta_j 1 - C_j)

``P(gamma) - D(alpha, beta) >= 0`` for every feasible pair.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import CertificateUnavailable, InfeasiblePlanError, InputError, NumericalError
from .problem import SUPPORT_TOL, ProblemInstance, SparsePlan, objective

JITTER_START = 1e-10
JITTER_MAX = 1e-6


class ConjugateResult(NamedTuple):
    value: float
    maximizer: np.ndarray


def sparse_conjugate(w, K: int, lambda2: float) -> ConjugateResult:
    """``max_{z >= 0, ||z||_0 <= K} <w, z> - lambda2/2 ||z||^2`` in closed form.

    Keeps the ``K`` largest entries of ``w`` (ties to the lowest index) and
    sets ``z = max(w, 0) / lambda2`` on them.
    """
    w = np.asarray(w, dtype=float).reshape(-1)
    if not lambda2 > 0:
        raise InputError("sparse conjugate is unbounded unless lambda2 > 0")
    if not 1 <= K <= w.size:
        raise InputError(f"K={K} must lie in [1, {w.size}]")
    order = np.argsort(-w, kind="stable")[:K]
    z = np.zeros_like(w)
    z[order] = np.maximum(w[order], 0.0) / lambda2
    value = float(np.sum(np.maximum(w[order], 0.0) ** 2) / (2.0 * lambda2))
    return ConjugateResult(value, z)


def _column_counts(plan: SparsePlan, tol):
    keep = plan.values > tol
    return np.bincount(plan.support.cols[keep], minlength=plan.shape[1])


class PrimalValue(NamedTuple):
    value: float
    feasible: bool
    violating_column: int | None = None


def primal_objective(instance: ProblemInstance, plan: SparsePlan, K2: int, tol: float = SUPPORT_TOL) -> PrimalValue:
    """Primal value with a feasibility flag.

    When some column carries more than ``K2`` entries above ``tol`` the plan is
    outside the domain; ``feasible`` is False and ``value`` still holds the
    finite objective so callers can report it.
    """
    if not instance.lambda2 > 0:
        raise CertificateUnavailable("the primal/dual pair requires lambda2 > 0")
    counts = _column_counts(plan, tol)
    over = np.flatnonzero(counts > K2)
    value = objective(instance, plan)
    if over.size:
        return PrimalValue(value, False, int(over[0]))
    return PrimalValue(value, True, None)


def _spd_quadratic_inverse(G, x):
    """``x^T G^{-1} x`` via Cholesky, escalating diagonal jitter on failure."""
    jitter = 0.0
    eye = np.eye(G.shape[0])
    while True:
        try:
            factor = cho_factor(G + jitter * eye, lower=True, check_finite=True)
            val = float(x @ cho_solve(factor, x))
            if np.isfinite(val):
                return val
        except LinAlgError:
            pass
        jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
        if jitter > JITTER_MAX * (1 + 1e-9):
            raise NumericalError("Gram matrix is not positive definite even with jitter 1e-6")


def dual_objective(instance: ProblemInstance, alpha, beta, K2: int) -> float:
    if not instance.lambda2 > 0:
        raise CertificateUnavailable("the dual requires lambda2 > 0")
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    beta = np.asarray(beta, dtype=float).reshape(-1)
    m, n = instance.shape
    if alpha.size != m or beta.size != n:
        raise InputError(f"dual variables must have lengths {m} and {n}")
    l1, l2 = instance.lambda1, instance.lambda2
    val = alpha @ instance.mu + beta @ instance.nu
    val -= _spd_quadratic_inverse(instance.G1, alpha) / (4.0 * l1)
    val -= _spd_quadratic_inverse(instance.G2, beta) / (4.0 * l1)
    W = alpha[:, None] + beta[None, :] - instance.C
    for j in range(n):
        val -= sparse_conjugate(W[:, j], K2, l2).value
    if not np.isfinite(val):
        raise NumericalError("dual objective is not finite")
    return float(val)


def dual_certificate(instance: ProblemInstance, plan: SparsePlan):
    """Dual candidate ``alpha = 2 lambda1 G1 (mu - gamma 1)``, ``beta = 2 lambda1 G2 (nu - gamma^T 1)``."""
    two_l1 = 2.0 * instance.lambda1
    alpha = two_l1 * (instance.a - instance.G1 @ plan.row_sums())
    beta = two_l1 * (instance.b - instance.G2 @ plan.col_sums())
    return alpha, beta


@dataclass
class DualCertificate:
    alpha: np.ndarray
    beta: np.ndarray
    primal: float
    dual: float
    gap: float
    feasible: bool = True

    def to_dict(self):
        d = asdict(self)
        d["alpha"] = [float(x) for x in self.alpha]
        d["beta"] = [float(x) for x in self.beta]
        return {k: d[k] for k in ("primal", "dual", "gap", "alpha", "beta", "feasible")}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def duality_gap(instance: ProblemInstance, plan: SparsePlan, K2: int, tol: float = SUPPORT_TOL) -> DualCertificate:
    """Assemble the primal value, the induced dual candidate and their gap.

    Raises
    ------
    CertificateUnavailable
        If ``lambda2 == 0``.
    InfeasiblePlanError
        If a column of ``plan`` exceeds the ``K2`` budget.
    """
    primal = primal_objective(instance, plan, K2, tol)
    if not primal.feasible:
        col = primal.violating_column
        raise InfeasiblePlanError(col, int(_column_counts(plan, tol)[col]), K2)
    alpha, beta = dual_certificate(instance, plan)
    dual = dual_objective(instance, alpha, beta, K2)
    return DualCertificate(alpha, beta, primal.value, dual, primal.value - dual, True)
