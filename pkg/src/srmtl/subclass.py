"""Subclass discovery by affinity propagation and the induced graph matrices."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .csp import FeatureMatrix
from .errors import InvalidConfig, ValidationError

__all__ = [
    "ApConfig",
    "ApResult",
    "SubclassPartition",
    "ap_cluster",
    "discover_subclasses",
    "encode_labels",
    "build_similarity",
    "build_laplacian",
    "negative_sq_distances",
]


@dataclass(frozen=True)
class ApConfig:
    damping: float = 0.7
    max_iters: int = 500
    convergence_window: int = 50
    preference: float | str = "median"
    # z-scoring puts noise-only bands on the same footing as modulated ones
    standardize: bool = False

    def __post_init__(self):
        if not 0.5 <= self.damping < 1.0:
            raise InvalidConfig(f"damping must lie in [0.5, 1), got {self.damping}")
        if not self.max_iters >= self.convergence_window >= 1:
            raise InvalidConfig("need max_iters >= convergence_window >= 1")
        if isinstance(self.preference, str):
            if self.preference != "median":
                raise InvalidConfig(f"preference must be 'median' or a number, got {self.preference!r}")
        elif not np.isfinite(self.preference):
            raise InvalidConfig("preference must be finite")

    @classmethod
    def from_dict(cls, d: dict) -> "ApConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown ap keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class ApResult:
    """``status`` is one of converged, max_iters, no_exemplar, singleton."""

    assignment: np.ndarray
    exemplars: np.ndarray
    status: str
    n_iter: int

    @property
    def n_clusters(self) -> int:
        return len(self.exemplars)


def negative_sq_distances(points: np.ndarray) -> np.ndarray:
    sq = np.sum(points ** 2, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * points @ points.T
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return -d


def _medoid(S: np.ndarray) -> int:
    return int(np.argmax(S.sum(axis=1)))


def ap_cluster(points: np.ndarray, cfg: ApConfig = ApConfig()) -> ApResult:
    """Affinity propagation on ``-||x_i - x_k||^2`` similarities.

    Responsibilities and availabilities are damped as
    ``new = damping * old + (1 - damping) * update``. Iteration stops once
    the exemplar set (points with ``r(k,k) + a(k,k) > 0``) has been unchanged
    for ``cfg.convergence_window`` iterations, or after ``cfg.max_iters``.
    No random jitter is added; ``argmax`` breaks ties towards the lowest
    index. If no point ever self-elects, everything goes to the medoid and
    the status is ``no_exemplar``.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValidationError(f"need an N x D point matrix with N >= 1, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("points must be finite")
    n = X.shape[0]
    if n == 1:
        return ApResult(np.zeros(1, dtype=int), np.zeros(1, dtype=int), "singleton", 0)

    S = negative_sq_distances(X)
    if cfg.preference == "median":
        pref = float(np.median(S[~np.eye(n, dtype=bool)]))
    else:
        pref = float(cfg.preference)
    np.fill_diagonal(S, pref)

    lam = cfg.damping
    A = np.zeros((n, n))
    R = np.zeros((n, n))
    rows = np.arange(n)
    prev = None
    stable = 0
    status = "max_iters"
    it = 0
    for it in range(1, cfg.max_iters + 1):
        AS = A + S
        best = np.argmax(AS, axis=1)
        first = AS[rows, best]
        AS[rows, best] = -np.inf
        second = AS.max(axis=1)
        Rnew = S - first[:, None]
        Rnew[rows, best] = S[rows, best] - second
        R = lam * R + (1.0 - lam) * Rnew

        Rp = np.maximum(R, 0.0)
        Rp[rows, rows] = R[rows, rows]
        Anew = Rp.sum(axis=0)[None, :] - Rp
        self_avail = Anew[rows, rows].copy()
        np.minimum(Anew, 0.0, out=Anew)
        Anew[rows, rows] = self_avail
        A = lam * A + (1.0 - lam) * Anew

        exemplar_mask = (np.diag(A) + np.diag(R)) > 0
        if prev is not None and np.array_equal(exemplar_mask, prev):
            stable += 1
        else:
            stable = 0
        prev = exemplar_mask
        if stable >= cfg.convergence_window - 1 and exemplar_mask.any():
            status = "converged"
            break

    exemplars = np.flatnonzero(prev)
    if exemplars.size == 0:
        m = _medoid(np.where(np.eye(n, dtype=bool), 0.0, S))
        return ApResult(np.zeros(n, dtype=int), np.array([m]), "no_exemplar", it)

    assignment = np.argmax(S[:, exemplars], axis=1)
    assignment[exemplars] = np.arange(exemplars.size)
    return ApResult(assignment, exemplars, status, it)


@dataclass(frozen=True)
class SubclassPartition:
    assignment: np.ndarray
    exemplars: tuple[int, ...]
    class_of_cluster: tuple[int, ...]
    status: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=int)
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)
        K = len(self.class_of_cluster)
        if len(self.exemplars) != K:
            raise ValidationError("one exemplar per cluster required")
        if a.size and (a.min() < 0 or a.max() >= K):
            raise ValidationError("cluster ids must lie in [0, K)")
        sizes = np.bincount(a, minlength=K)
        if np.any(sizes == 0):
            raise ValidationError("every cluster must be non-empty")
        for k, e in enumerate(self.exemplars):
            if a[e] != k:
                raise ValidationError(f"exemplar {e} does not belong to cluster {k}")

    @property
    def K(self) -> int:
        return len(self.class_of_cluster)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.K)

    def subset(self, indices) -> "SubclassPartition":
        """Restrict to ``indices``; clusters left empty are dropped and ids compacted."""
        indices = np.asarray(indices)
        sub = self.assignment[indices]
        kept = np.unique(sub)
        remap = {int(k): i for i, k in enumerate(kept)}
        pos = {int(t): i for i, t in enumerate(indices)}
        exemplars = []
        for k in kept:
            e = self.exemplars[k]
            if e in pos:
                exemplars.append(pos[e])
            else:
                exemplars.append(int(np.flatnonzero(sub == k)[0]))
        return SubclassPartition(
            np.array([remap[int(k)] for k in sub], dtype=int),
            tuple(exemplars),
            tuple(self.class_of_cluster[k] for k in kept),
            dict(self.status),
        )


def _standardize(F: np.ndarray) -> np.ndarray:
    sd = F.std(axis=0)
    sd[sd == 0] = 1.0
    return (F - F.mean(axis=0)) / sd


def discover_subclasses(F, labels, cfg: ApConfig = ApConfig()) -> SubclassPartition:
    """Cluster each class separately; ids run over class 1's clusters, then class 2's."""
    values = F.values if isinstance(F, FeatureMatrix) else np.asarray(F, dtype=np.float64)
    labels = np.asarray(labels)
    if values.shape[0] != labels.shape[0]:
        raise ValidationError(f"{values.shape[0]} feature rows for {labels.shape[0]} labels")
    if set(np.unique(labels).tolist()) != {1, 2}:
        raise ValidationError("subclass discovery needs both classes present")
    if cfg.standardize:
        values = _standardize(values)

    n = values.shape[0]
    assignment = np.full(n, -1, dtype=int)
    exemplars, owner, status = [], [], {}
    offset = 0
    for c in (1, 2):
        idx = np.flatnonzero(labels == c)
        res = ap_cluster(values[idx], cfg)
        assignment[idx] = res.assignment + offset
        exemplars.extend(int(idx[e]) for e in res.exemplars)
        owner.extend([c] * res.n_clusters)
        status[c] = res.status
        offset += res.n_clusters
    return SubclassPartition(assignment, tuple(exemplars), tuple(owner), status)


def encode_labels(partition: SubclassPartition) -> np.ndarray:
    """One-versus-all indicator matrix ``Y`` (N x K)."""
    Y = np.zeros((partition.assignment.size, partition.K))
    Y[np.arange(partition.assignment.size), partition.assignment] = 1.0
    return Y


def build_similarity(partition: SubclassPartition) -> np.ndarray:
    """``s_ij = 1`` when trials i and j share a cluster (diagonal included)."""
    a = partition.assignment
    return (a[:, None] == a[None, :]).astype(np.float64)


def build_laplacian(S: np.ndarray) -> np.ndarray:
    """``L = D - S`` with ``D`` the diagonal of row sums."""
    S = np.asarray(S, dtype=np.float64)
    return np.diag(S.sum(axis=1)) - S
