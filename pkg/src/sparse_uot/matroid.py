"""Uniform and partition matroids over the entries of an ``m x n`` plan."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .problem import SupportSet

UNIFORM = "uniform"
PARTITION = "partition"


@dataclass(frozen=True)
class MatroidConstraint:
    """Either at most ``k`` entries overall (uniform) or at most ``k`` per column (partition).

    Partition blocks are the columns ``P_j = {(i, j) : i in [m]}``.
    """

    kind: str
    k: int
    m: int
    n: int

    def __post_init__(self):
        if self.kind not in (UNIFORM, PARTITION):
            raise InputError(f"unknown matroid kind {self.kind!r}")
        if self.m < 1 or self.n < 1:
            raise InputError("ground set dimensions must be positive")
        if self.k < 1:
            raise InputError("matroid cardinality must be positive")
        if self.kind == UNIFORM and self.k > self.m * self.n:
            raise InputError(f"K1={self.k} exceeds the ground set size {self.m * self.n}")
        if self.kind == PARTITION and self.k > self.m:
            raise InputError(f"K2={self.k} exceeds the column length {self.m}")

    @classmethod
    def uniform(cls, K1, m, n):
        return cls(UNIFORM, int(K1), int(m), int(n))

    @classmethod
    def partition(cls, K2, m, n):
        return cls(PARTITION, int(K2), int(m), int(n))

    @property
    def shape(self):
        return (self.m, self.n)

    @property
    def rank(self) -> int:
        return self.k if self.kind == UNIFORM else self.k * self.n

    def capacity(self, S: SupportSet) -> np.ndarray:
        """Remaining room per block (a single block for uniform matroids)."""
        if self.kind == UNIFORM:
            return np.array([self.k - len(S)])
        return self.k - np.bincount(S.cols, minlength=self.n)

    def candidates(self, S: SupportSet) -> np.ndarray:
        """Linear indices ``u`` outside ``S`` with ``S + u`` independent, increasing order.

        For these matroids this is exactly the union of the independent sets
        of the contraction by ``S``.
        """
        rest = S.complement()
        cap = self.capacity(S)
        if self.kind == UNIFORM:
            return rest if cap[0] > 0 else rest[:0]
        return rest[cap[rest % self.n] > 0]


def _check_ground(matroid, S):
    if S.shape != matroid.shape:
        raise InputError(f"support shape {S.shape} does not match matroid ground {matroid.shape}")


def is_independent(matroid: MatroidConstraint, S: SupportSet) -> bool:
    _check_ground(matroid, S)
    return bool(np.all(matroid.capacity(S) >= 0))


def best_base_of_contraction(matroid: MatroidConstraint, S: SupportSet, scores) -> SupportSet:
    """Maximal independent set of the contraction by ``S`` with the largest thresholded score.

    Parameters
    ----------
    matroid : MatroidConstraint
    S : SupportSet
        Current independent set.
    scores : array_like, shape (m, n) or (m*n,)
        Score of each element; only entries of ``V \\ S`` in blocks with spare
        capacity are read. Scores are thresholded at zero before ranking.

    Returns
    -------
    SupportSet
        Elements ordered by decreasing thresholded score, ties broken by the
        lowest linear index ``i * n + j``.
    """
    _check_ground(matroid, S)
    if not is_independent(matroid, S):
        raise InputError("support is not independent in the matroid")
    scores = np.asarray(scores, dtype=float).reshape(-1)
    if scores.size != matroid.m * matroid.n:
        raise InputError("scores must have one entry per ground-set element")
    cand = matroid.candidates(S)
    if cand.size == 0:
        return SupportSet.from_linear(cand, matroid.shape)
    thr = np.maximum(scores[cand], 0.0)
    if np.any(np.isnan(thr)):
        raise InputError("missing score for a candidate element")
    # lexsort: last key is primary; cand is increasing so ties resolve to lowest index
    order = np.lexsort((cand, -thr))
    cap = matroid.capacity(S)
    chosen = []
    if matroid.kind == UNIFORM:
        chosen = cand[order[: cap[0]]].tolist()
    else:
        left = cap.copy()
        for idx in order:
            u = int(cand[idx])
            j = u % matroid.n
            if left[j] > 0:
                chosen.append(u)
                left[j] -= 1
    return SupportSet.from_linear(chosen, matroid.shape)
