"""MMD-regularized unbalanced OT objective, restricted solves and the support set function.

The objective on an ``m x n`` nonnegative plan ``gamma`` is::

    U(gamma) = <C, gamma> + lambda1 * ||gamma 1 - mu||^2_G1
             + lambda1 * ||gamma^T 1 - nu||^2_G2 + lambda2/2 * ||gamma||^2

where ``||z||^2_G = z^T G z``. Plans are always handled in sparse form: a
support of ``(i, j)`` index pairs plus one value per pair. Evaluating ``U`` or
its gradient only touches the rows ``I_S`` and columns ``J_S`` that the support
actually uses.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .geometry import (
    DiscreteMeasure,
    GramMatrix,
    KernelSpec,
    PointCloud,
    cost_matrix,
    gram_matrix,
    median_heuristic,
)

log = logging.getLogger(__name__)

SUPPORT_TOL = 1e-12
_TINY = np.finfo(float).tiny


class SupportSet:
    """A duplicate-free set of ``(i, j)`` indices into an ``m x n`` matrix.

    Elements are kept in insertion order (the order greedy algorithms add
    them); equality and hashing ignore order.
    """

    __slots__ = ("shape", "linear", "_key")

    def __init__(self, elements=(), shape=None):
        if shape is None:
            raise InputError("SupportSet needs the matrix shape (m, n)")
        m, n = int(shape[0]), int(shape[1])
        pairs = list(elements)
        if pairs:
            arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
            if np.any(arr[:, 0] < 0) or np.any(arr[:, 0] >= m) or np.any(arr[:, 1] < 0) or np.any(arr[:, 1] >= n):
                raise InputError(f"support index out of range for shape {(m, n)}")
            lin = arr[:, 0] * n + arr[:, 1]
        else:
            lin = np.empty(0, dtype=np.int64)
        self._init(lin, (m, n))

    def _init(self, lin, shape):
        lin = np.asarray(lin, dtype=np.int64)
        if np.unique(lin).size != lin.size:
            raise InputError("support contains duplicate elements")
        lin.setflags(write=False)
        self.shape = shape
        self.linear = lin
        self._key = None

    @classmethod
    def from_linear(cls, linear, shape):
        m, n = shape
        linear = np.asarray(linear, dtype=np.int64).reshape(-1)
        if linear.size and (linear.min() < 0 or linear.max() >= m * n):
            raise InputError(f"linear index out of range for shape {(m, n)}")
        obj = cls.__new__(cls)
        obj._init(linear.copy(), (int(m), int(n)))
        return obj

    @classmethod
    def full(cls, shape):
        return cls.from_linear(np.arange(shape[0] * shape[1]), shape)

    @property
    def rows(self):
        return self.linear // self.shape[1]

    @property
    def cols(self):
        return self.linear % self.shape[1]

    @property
    def key(self):
        """Canonical (sorted) encoding used for memoization."""
        if self._key is None:
            self._key = (self.shape, tuple(np.sort(self.linear).tolist()))
        return self._key

    def add(self, u):
        """Return a new support with element ``u`` (pair or linear index) appended."""
        lin = self._linear_of(u)
        if lin in self:
            raise InputError(f"element {self.pair(lin)} already in support")
        return SupportSet.from_linear(np.append(self.linear, lin), self.shape)

    def union(self, other):
        extra = [u for u in _linear_iter(other, self.shape) if u not in self]
        return SupportSet.from_linear(np.append(self.linear, np.asarray(extra, dtype=np.int64)), self.shape)

    def pair(self, lin):
        return divmod(int(lin), self.shape[1])

    def complement(self):
        """Linear indices of ``V \\ S`` in increasing order."""
        mask = np.ones(self.shape[0] * self.shape[1], dtype=bool)
        mask[self.linear] = False
        return np.flatnonzero(mask)

    def _linear_of(self, u):
        if isinstance(u, (tuple, list, np.ndarray)) and np.size(u) == 2:
            i, j = int(u[0]), int(u[1])
            if not (0 <= i < self.shape[0] and 0 <= j < self.shape[1]):
                raise InputError(f"index {(i, j)} out of range for shape {self.shape}")
            return i * self.shape[1] + j
        lin = int(u)
        if not 0 <= lin < self.shape[0] * self.shape[1]:
            raise InputError(f"linear index {lin} out of range")
        return lin

    def __len__(self):
        return self.linear.size

    def __iter__(self):
        n = self.shape[1]
        for lin in self.linear.tolist():
            yield divmod(lin, n)

    def __contains__(self, u):
        try:
            lin = self._linear_of(u)
        except InputError:
            return False
        return bool(np.any(self.linear == lin))

    def __eq__(self, other):
        return isinstance(other, SupportSet) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"SupportSet({list(self)}, shape={self.shape})"


def _linear_iter(elements, shape):
    if isinstance(elements, SupportSet):
        return elements.linear.tolist()
    n = shape[1]
    return [int(i) * n + int(j) for i, j in elements]


@dataclass(frozen=True)
class SparsePlan:
    """Transport plan restricted to ``support``; entries off the support are zero."""

    support: SupportSet
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size != len(self.support):
            raise InputError(f"{v.size} values for a support of size {len(self.support)}")
        if np.any(~np.isfinite(v)) or np.any(v < 0):
            raise InputError("plan values must be finite and nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, shape):
        return cls(SupportSet((), shape), np.empty(0))

    @classmethod
    def from_dense(cls, gamma, tol=0.0):
        gamma = np.asarray(gamma, dtype=float)
        lin = np.flatnonzero(gamma.reshape(-1) > tol)
        return cls(SupportSet.from_linear(lin, gamma.shape), gamma.reshape(-1)[lin])

    @property
    def shape(self):
        return self.support.shape

    def dense(self):
        out = np.zeros(self.shape)
        out.reshape(-1)[self.support.linear] = self.values
        return out

    def row_sums(self):
        return np.bincount(self.support.rows, self.values, minlength=self.shape[0])

    def col_sums(self):
        return np.bincount(self.support.cols, self.values, minlength=self.shape[1])

    def extend(self, u):
        """Append ``u`` to the support with value 0 (a warm start for the enlarged problem)."""
        return SparsePlan(self.support.add(u), np.append(self.values, 0.0))

    def on_support(self, support):
        """Re-express the plan on a superset ``support`` (zeros on new elements)."""
        lookup = dict(zip(self.support.linear.tolist(), self.values.tolist()))
        if any(lin not in set(support.linear.tolist()) for lin in lookup):
            raise InputError("target support does not contain the plan's support")
        vals = np.array([lookup.get(lin, 0.0) for lin in support.linear.tolist()])
        return SparsePlan(support, vals)

    def pruned(self, tol=SUPPORT_TOL):
        """Drop entries whose value is at or below ``tol``."""
        keep = self.values > tol
        return SparsePlan(SupportSet.from_linear(self.support.linear[keep], self.shape), self.values[keep])

    def nnz(self, tol=SUPPORT_TOL):
        return int(np.count_nonzero(self.values > tol))


class ProblemInstance:
    """Everything the objective needs, with ``G1 mu``, ``G2 nu`` and ``U(0)`` precomputed.

    Parameters
    ----------
    C : array_like, shape (m, n)
        Nonnegative cost matrix.
    G1, G2 : GramMatrix or array_like
        Source (m x m) and target (n x n) Gram matrices.
    mu, nu : DiscreteMeasure or array_like
        Source and target masses.
    lambda1 : float
        Weight of both squared-MMD marginal penalties; must be positive.
    lambda2 : float, optional
        Weight of the quadratic regularizer ``lambda2/2 ||gamma||^2``.
    """

    def __init__(self, C, G1, G2, mu, nu, lambda1, lambda2=0.0):
        C = np.array(C, dtype=float)
        if C.ndim != 2 or C.size == 0:
            raise InputError(f"cost matrix must be a non-empty 2-D array, got shape {C.shape}")
        if not np.all(np.isfinite(C)) or np.any(C < 0):
            raise InputError("cost matrix entries must be finite and nonnegative")
        m, n = C.shape
        G1 = G1 if isinstance(G1, GramMatrix) else GramMatrix(G1)
        G2 = G2 if isinstance(G2, GramMatrix) else GramMatrix(G2)
        mu = mu.weights if isinstance(mu, DiscreteMeasure) else DiscreteMeasure(mu).weights
        nu = nu.weights if isinstance(nu, DiscreteMeasure) else DiscreteMeasure(nu).weights
        if G1.size != m or G2.size != n or mu.size != m or nu.size != n:
            raise InputError(
                f"dimension mismatch: C {C.shape}, G1 {G1.size}, G2 {G2.size}, mu {mu.size}, nu {nu.size}"
            )
        if not (np.isfinite(lambda1) and lambda1 > 0):
            raise InputError(f"lambda1 must be positive, got {lambda1}")
        if not (np.isfinite(lambda2) and lambda2 >= 0):
            raise InputError(f"lambda2 must be nonnegative, got {lambda2}")
        C.setflags(write=False)
        self.C = C
        self.gram1 = G1
        self.gram2 = G2
        self.mu = mu
        self.nu = nu
        self.lambda1 = float(lambda1)
        self.lambda2 = float(lambda2)
        self.a = G1.entries @ mu
        self.b = G2.entries @ nu
        self.const0 = self.lambda1 * (mu @ self.a + nu @ self.b)
        for arr in (self.a, self.b):
            arr.setflags(write=False)

    @classmethod
    def from_clouds(cls, source, target, kernel=None, lambda1=1.0, lambda2=0.0,
                    mu=None, nu=None, cost="sqeuclidean", normalize=True):
        """Build an instance from two point clouds; ``kernel=None`` uses RBF with the median heuristic."""
        source = source if isinstance(source, PointCloud) else PointCloud(source)
        target = target if isinstance(target, PointCloud) else PointCloud(target)
        if kernel is None:
            kernel = KernelSpec("rbf", median_heuristic(source, target))
        mu = DiscreteMeasure.uniform(source.count) if mu is None else mu
        nu = DiscreteMeasure.uniform(target.count) if nu is None else nu
        C = cost_matrix(cost, source, target, normalize=normalize)
        return cls(C, gram_matrix(kernel, source), gram_matrix(kernel, target), mu, nu, lambda1, lambda2)

    @property
    def G1(self):
        return self.gram1.entries

    @property
    def G2(self):
        return self.gram2.entries

    @property
    def shape(self):
        return self.C.shape

    @property
    def m(self):
        return self.C.shape[0]

    @property
    def n(self):
        return self.C.shape[1]

    def global_lipschitz(self):
        """Upper bound ``2 lambda1 (n e1_max + m e2_max) + lambda2`` on the Hessian norm."""
        return 2.0 * self.lambda1 * (self.n * self.gram1.eig_max + self.m * self.gram2.eig_max) + self.lambda2

    def with_lambdas(self, lambda1=None, lambda2=None):
        return ProblemInstance(
            self.C, self.gram1, self.gram2, self.mu, self.nu,
            self.lambda1 if lambda1 is None else lambda1,
            self.lambda2 if lambda2 is None else lambda2,
        )


class _Restricted:
    """The objective restricted to one support, in compact row/column coordinates."""

    def __init__(self, inst: ProblemInstance, support: SupportSet):
        if support.shape != inst.shape:
            raise InputError(f"support shape {support.shape} does not match instance {inst.shape}")
        rows, cols = support.rows, support.cols
        self.inst = inst
        self.I, self.ri = np.unique(rows, return_inverse=True)
        self.J, self.cj = np.unique(cols, return_inverse=True)
        self.G1 = inst.G1[np.ix_(self.I, self.I)]
        self.G2 = inst.G2[np.ix_(self.J, self.J)]
        self.c = inst.C[rows, cols]
        self.aI = inst.a[self.I]
        self.bJ = inst.b[self.J]
        self.l1 = inst.lambda1
        self.l2 = inst.lambda2

    def sums(self, v):
        return (np.bincount(self.ri, v, minlength=self.I.size),
                np.bincount(self.cj, v, minlength=self.J.size))

    def value(self, v):
        r, s = self.sums(v)
        quad = r @ (self.G1 @ r - 2.0 * self.aI) + s @ (self.G2 @ s - 2.0 * self.bJ)
        return float(self.c @ v + self.l1 * quad + 0.5 * self.l2 * (v @ v) + self.inst.const0)

    def grad(self, v):
        r, s = self.sums(v)
        g1 = self.G1 @ r - self.aI
        g2 = self.G2 @ s - self.bJ
        return self.c + 2.0 * self.l1 * (g1[self.ri] + g2[self.cj]) + self.l2 * v

    def lipschitz(self):
        """Restricted Hessian norm bound.

        ``||E1 v||^2 <= (max entries per row) ||v||^2`` where ``E1`` sums a plan
        over its rows; same for columns. Never exceeds the global bound.
        """
        row_mult = np.bincount(self.ri).max()
        col_mult = np.bincount(self.cj).max()
        e1 = np.linalg.eigvalsh(self.G1)[-1]
        e2 = np.linalg.eigvalsh(self.G2)[-1]
        return 2.0 * self.l1 * (row_mult * e1 + col_mult * e2) + self.l2


def objective(instance: ProblemInstance, plan: SparsePlan) -> float:
    """Value of the objective at a sparse plan, never forming the dense matrix."""
    if len(plan.support) == 0:
        return float(instance.const0)
    return _Restricted(instance, plan.support).value(plan.values)


def _gradient_linear(instance: ProblemInstance, plan: SparsePlan, lin) -> np.ndarray:
    m, n = instance.shape
    lin = np.asarray(lin, dtype=np.int64)
    ii, jj = lin // n, lin % n
    l1 = instance.lambda1
    grad = instance.C[ii, jj] - 2.0 * l1 * (instance.a[ii] + instance.b[jj])
    if len(plan.support) == 0:
        return grad
    rows, cols = plan.support.rows, plan.support.cols
    I, ri = np.unique(rows, return_inverse=True)
    J, cj = np.unique(cols, return_inverse=True)
    r = np.bincount(ri, plan.values, minlength=I.size)
    s = np.bincount(cj, plan.values, minlength=J.size)
    # row term depends only on i, column term only on j
    grad += 2.0 * l1 * (instance.G1[np.ix_(ii, I)] @ r + instance.G2[np.ix_(jj, J)] @ s)
    if instance.lambda2 > 0:
        order = np.argsort(plan.support.linear)
        sorted_lin = plan.support.linear[order]
        pos = np.searchsorted(sorted_lin, lin)
        pos = np.minimum(pos, sorted_lin.size - 1)
        hit = sorted_lin[pos] == lin
        grad[hit] += instance.lambda2 * plan.values[order[pos[hit]]]
    return grad


def gradient(instance: ProblemInstance, plan: SparsePlan, at) -> np.ndarray:
    """Partial derivatives of the objective at ``plan`` for each requested index.

    ``at`` is a :class:`SupportSet`, a sequence of ``(i, j)`` pairs, or an
    array of linear indices. The result is aligned with ``at``.
    """
    m, n = instance.shape
    if isinstance(at, SupportSet):
        lin = at.linear
    else:
        arr = np.asarray(at, dtype=np.int64)
        if arr.ndim == 2:
            if np.any(arr < 0) or np.any(arr[:, 0] >= m) or np.any(arr[:, 1] >= n):
                raise InputError("gradient index out of range")
            lin = arr[:, 0] * n + arr[:, 1]
        else:
            lin = arr.reshape(-1)
            if lin.size and (lin.min() < 0 or lin.max() >= m * n):
                raise InputError("gradient index out of range")
    return _gradient_linear(instance, plan, lin)


@dataclass
class SolverConfig:
    """Settings for the restricted solver and the greedy drivers.

    ``kkt_tol`` guards the relative-change stopping rule: the solver only
    stops early once the projected-gradient residual is also below it.
    """

    max_iter: int = 1000
    rel_tol: float = 1e-10
    support_tol: float = SUPPORT_TOL
    kkt_tol: float = 1e-9
    seed: int = 0
    epsilon: float = 0.01
    early_stop: bool = False

    def __post_init__(self):
        if int(self.max_iter) < 1:
            raise InputError("max_iter must be at least 1")
        for name in ("rel_tol", "support_tol", "kkt_tol"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive")
        if not 0 < self.epsilon < 1:
            raise InputError("epsilon must lie in (0, 1)")
        if int(self.seed) < 0:
            raise InputError("seed must be a nonnegative integer")


@dataclass
class RestrictedSolution:
    plan: SparsePlan
    value: float
    iterations: int = 0
    converged: bool = True


def kkt_residual(v, g):
    """``max |min(v, g)|``: zero exactly at a nonnegatively-constrained stationary point."""
    if v.size == 0:
        return 0.0
    return float(np.max(np.abs(np.minimum(v, g))))


def solve_restricted(instance: ProblemInstance, support: SupportSet, warm_start: SparsePlan | None = None,
                     config: SolverConfig | None = None) -> RestrictedSolution:
    """Minimize the objective over plans supported on ``support``.

    Accelerated projected gradient with step ``1/L`` and momentum restarted
    whenever the objective would increase. Stops after ``config.max_iter``
    iterations or once the relative objective change drops below
    ``config.rel_tol`` with a projected-gradient residual below
    ``config.kkt_tol``. If the iteration budget runs out the best iterate is
    returned with ``converged=False``.
    """
    config = config or SolverConfig()
    if len(support) == 0:
        return RestrictedSolution(SparsePlan.zeros(instance.shape), float(instance.const0), 0, True)
    prob = _Restricted(instance, support)
    x = np.zeros(len(support))
    if warm_start is not None and len(warm_start.support):
        x = warm_start.on_support(support).values.copy()
    L = prob.lipschitz()
    step = 1.0 / L
    fx = prob.value(x)
    y = x
    t = 1.0
    converged = False
    it = 0
    for it in range(1, int(config.max_iter) + 1):
        x_new = np.maximum(y - step * prob.grad(y), 0.0)
        f_new = prob.value(x_new)
        if f_new > fx:
            # momentum overshot: fall back to a plain projected step from x
            t = 1.0
            x_new = np.maximum(x - step * prob.grad(x), 0.0)
            f_new = prob.value(x_new)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        small = abs(fx - f_new) <= config.rel_tol * max(abs(fx), _TINY)
        x, fx, t = x_new, f_new, t_new
        if small and kkt_residual(x, prob.grad(x)) <= config.kkt_tol:
            converged = True
            break
    if not converged:
        log.debug("restricted solve hit max_iter=%d on |S|=%d", config.max_iter, len(support))
    return RestrictedSolution(SparsePlan(support, x), prob.value(x), it, converged)


class SetFunction:
    """``F(S) = U(0) - min_{supp(gamma) in S, gamma >= 0} U(gamma)`` with per-run memoization.

    ``solves`` counts restricted solves actually performed (cache misses).
    """

    def __init__(self, instance: ProblemInstance, config: SolverConfig | None = None, cache=None):
        self.instance = instance
        self.config = config or SolverConfig()
        self.cache = {} if cache is None else cache
        self.solves = 0
        self.inner_iterations = 0

    def solve(self, support: SupportSet, warm_start: SparsePlan | None = None) -> RestrictedSolution:
        key = support.key
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        sol = solve_restricted(self.instance, support, warm_start, self.config)
        if len(support):
            self.solves += 1
            self.inner_iterations += sol.iterations
        self.cache[key] = sol
        return sol

    def __call__(self, support: SupportSet, warm_start: SparsePlan | None = None) -> float:
        if len(support) == 0:
            return 0.0
        return self.value_of(self.solve(support, warm_start))

    def value_of(self, sol: RestrictedSolution) -> float:
        return float(self.instance.const0 - sol.value)

    def clear(self):
        self.cache.clear()


def set_function_F(instance: ProblemInstance, support: SupportSet, config: SolverConfig | None = None,
                   cache=None) -> float:
    if len(support) == 0:
        return 0.0
    return SetFunction(instance, config, cache)(support)


@dataclass(frozen=True)
class CurvatureDiagnostics:
    """Restricted curvature bounds and the implied submodularity-ratio lower bound.

    ``certified`` is True when ``u_lower`` provably does not exceed the true
    restricted strong convexity, i.e. when the marginal terms contribute at
    most ``lambda2 / 2``. Otherwise ``u_lower`` is only a heuristic: supports
    whose bipartite row/column graph contains a cycle make the marginal
    Hessian singular, so with ``lambda2 = 0`` the true constant can be 0.
    """

    u_lower: float
    U_tilde1: float
    alpha_lower: float
    K: int = 0
    reliable: bool = True
    certified: bool = False
    notes: tuple = field(default=())


def curvature(instance: ProblemInstance, K: int = 1) -> CurvatureDiagnostics:
    """Eigenvalue-based RSC/RSM diagnostics.

    ``u_lower = lambda1 (e0(G1) n + e0(G2) m) + lambda2/2`` and the
    one-coordinate smoothness ``U_tilde1 = 2 lambda1 max_ij (G1_ii + G2_jj) + lambda2``
    (the exact second derivative along a single entry).
    """
    l1, l2 = instance.lambda1, instance.lambda2
    m, n = instance.shape
    e0_1, e0_2 = instance.gram1.eig_min, instance.gram2.eig_min
    marginal = l1 * (e0_1 * n + e0_2 * m)
    u_lower = marginal + 0.5 * l2
    U1 = 2.0 * l1 * (np.max(np.diag(instance.G1)) + np.max(np.diag(instance.G2))) + l2
    notes = []
    reliable = True
    if instance.gram1.degenerate or instance.gram2.degenerate:
        reliable = False
        notes.append("Gram matrix numerically singular (duplicate points?)")
    if u_lower <= 0:
        reliable = False
        notes.append("nonpositive restricted strong convexity bound")
    # the quadratic term alone is lambda2-strongly convex on every support
    certified = reliable and marginal <= 0.5 * l2
    if not certified:
        notes.append("u_lower not certified: marginal curvature term exceeds lambda2/2")
    alpha = min(1.0, u_lower / U1) if U1 > 0 else 0.0
    return CurvatureDiagnostics(float(u_lower), float(U1), float(alpha), int(K), reliable, certified, tuple(notes))


def restricted_hessian(instance: ProblemInstance, support: SupportSet) -> np.ndarray:
    """Dense Hessian of the objective over the entries of ``support`` (small supports only)."""
    rows, cols = support.rows, support.cols
    H = 2.0 * instance.lambda1 * (instance.G1[np.ix_(rows, rows)] + instance.G2[np.ix_(cols, cols)])
    return H + instance.lambda2 * np.eye(len(support))
