"""Point clouds, measures, kernels, Gram and cost matrices."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import InputError, NumericalError

KERNEL_FAMILIES = ("rbf", "imq", "imq-v2")
COST_KINDS = ("sqeuclidean", "cosine")

# eigenvalues at or below this are treated as a rank deficiency
DEGENERACY_TOL = 1e-10


@dataclass(frozen=True)
class PointCloud:
    """An ordered set of ``count`` points in ``R^d``, stored as a (count, d) array."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
            raise InputError(f"point cloud must be a non-empty 2-D array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InputError("point cloud contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def count(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.count


@dataclass(frozen=True)
class DiscreteMeasure:
    """Nonnegative (not necessarily normalized) weights on the points of a cloud."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.size == 0:
            raise InputError("measure must have at least one weight")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InputError("measure weights must be finite and nonnegative")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, n: int, total: float = 1.0) -> "DiscreteMeasure":
        return cls(np.full(n, total / n))

    def __len__(self):
        return self.weights.size


@dataclass(frozen=True)
class KernelSpec:
    family: str = "rbf"
    sigma2: float = 1.0

    def __post_init__(self):
        fam = self.family.lower()
        if fam not in KERNEL_FAMILIES:
            raise InputError(f"unknown kernel family {self.family!r}; expected one of {KERNEL_FAMILIES}")
        object.__setattr__(self, "family", fam)
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise InputError(f"kernel bandwidth must be positive and finite, got {self.sigma2}")

    def from_sqdist(self, d2):
        """Evaluate the kernel as a function of squared distance (vectorized)."""
        d2 = np.asarray(d2, dtype=float)
        s2 = self.sigma2
        if self.family == "rbf":
            return np.exp(-d2 / (2.0 * s2))
        if self.family == "imq":
            return (s2 + d2) ** -0.5
        return ((1.0 + d2) / s2) ** -0.5


def kernel_eval(spec: KernelSpec, x, y) -> float:
    """Kernel value ``k(x, y)`` for two coordinate vectors."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise InputError(f"dimension mismatch: {x.shape} vs {y.shape}")
    diff = x - y
    return float(spec.from_sqdist(diff @ diff))


@dataclass(frozen=True)
class GramMatrix:
    """Symmetric kernel matrix with its extreme eigenvalues cached."""

    entries: np.ndarray
    eig_min: float = field(default=np.nan)
    eig_max: float = field(default=np.nan)

    def __post_init__(self):
        G = np.array(self.entries, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1] or G.shape[0] == 0:
            raise InputError(f"Gram matrix must be square and non-empty, got shape {G.shape}")
        if not np.all(np.isfinite(G)):
            raise InputError("Gram matrix contains non-finite entries")
        if not np.allclose(G, G.T, rtol=0.0, atol=1e-12):
            raise InputError("Gram matrix is not symmetric")
        G = 0.5 * (G + G.T)
        G.setflags(write=False)
        object.__setattr__(self, "entries", G)
        if np.isnan(self.eig_min) or np.isnan(self.eig_max):
            eigs = np.linalg.eigvalsh(G)
            if not np.all(np.isfinite(eigs)):
                raise NumericalError("non-finite eigenvalues in Gram matrix")
            object.__setattr__(self, "eig_min", float(eigs[0]))
            object.__setattr__(self, "eig_max", float(eigs[-1]))

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def degenerate(self) -> bool:
        """True when the matrix is numerically rank deficient (e.g. duplicate points)."""
        return self.eig_min <= DEGENERACY_TOL

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


def _as_cloud(c) -> PointCloud:
    return c if isinstance(c, PointCloud) else PointCloud(c)


def gram_matrix(spec: KernelSpec, cloud) -> GramMatrix:
    cloud = _as_cloud(cloud)
    d2 = cdist(cloud.points, cloud.points, "sqeuclidean")
    return GramMatrix(spec.from_sqdist(d2))


def cross_kernel(spec: KernelSpec, source, target) -> np.ndarray:
    """Rectangular kernel matrix between two clouds."""
    source, target = _as_cloud(source), _as_cloud(target)
    if source.dim != target.dim:
        raise InputError(f"dimension mismatch: {source.dim} vs {target.dim}")
    return spec.from_sqdist(cdist(source.points, target.points, "sqeuclidean"))


def median_heuristic(source, target) -> float:
    """Median squared pairwise distance over the pooled clouds.

    All unordered pairs of distinct indices count, including pairs of
    coincident points. For an even number of pairs the lower middle value is
    returned so the result is an actual pairwise distance.
    """
    source, target = _as_cloud(source), _as_cloud(target)
    if source.dim != target.dim:
        raise InputError(f"dimension mismatch: {source.dim} vs {target.dim}")
    pooled = np.vstack([source.points, target.points])
    if pooled.shape[0] < 2:
        raise InputError("median heuristic needs at least two points")
    d2 = np.sort(pdist(pooled, "sqeuclidean"))
    med = float(d2[(d2.size - 1) // 2])
    if med <= 0.0:
        raise InputError("median heuristic gives zero bandwidth (points coincide)")
    return med


def cost_matrix(kind, source, target, normalize=True) -> np.ndarray:
    """Pairwise cost between source rows and target rows.

    ``kind`` is ``"sqeuclidean"`` or ``"cosine"`` (one minus cosine
    similarity). With ``normalize`` the matrix is divided by its largest
    entry so that every entry lies in [0, 1].
    """
    source, target = _as_cloud(source), _as_cloud(target)
    if source.dim != target.dim:
        raise InputError(f"dimension mismatch: {source.dim} vs {target.dim}")
    if kind == "sqeuclidean":
        C = cdist(source.points, target.points, "sqeuclidean")
    elif kind == "cosine":
        xn = np.linalg.norm(source.points, axis=1)
        yn = np.linalg.norm(target.points, axis=1)
        if np.any(xn == 0) or np.any(yn == 0):
            raise InputError("cosine cost is undefined for zero-norm points")
        sim = (source.points / xn[:, None]) @ (target.points / yn[:, None]).T
        C = 1.0 - np.clip(sim, -1.0, 1.0)
    else:
        raise InputError(f"unknown cost kind {kind!r}; expected one of {COST_KINDS}")
    C = np.maximum(C, 0.0)
    return normalize_cost(C) if normalize else C


def normalize_cost(C) -> np.ndarray:
    C = np.asarray(C, dtype=float)
    top = C.max() if C.size else 0.0
    return C / top if top > 0 else C.copy()


def squared_mmd(spec: KernelSpec, source, target, mu=None, nu=None) -> float:
    """Squared kernel MMD between two weighted point clouds (uniform weights by default)."""
    source, target = _as_cloud(source), _as_cloud(target)
    mu = np.full(source.count, 1.0 / source.count) if mu is None else np.asarray(mu, float)
    nu = np.full(target.count, 1.0 / target.count) if nu is None else np.asarray(nu, float)
    kxx = cross_kernel(spec, source, source)
    kyy = cross_kernel(spec, target, target)
    kxy = cross_kernel(spec, source, target)
    val = mu @ kxx @ mu + nu @ kyy @ nu - 2.0 * mu @ kxy @ nu
    return float(max(val, 0.0))
