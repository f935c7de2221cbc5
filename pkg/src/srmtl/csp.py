"""Common spatial patterns per band and the augmented log-variance features."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .dataio import Trial, TrialSet
from .errors import (
    DegenerateVariance,
    DimensionMismatch,
    EmptyClass,
    InvalidConfig,
    SingularCovariance,
)
from .signal import FilterBank, filter_trialset

__all__ = [
    "SpatialFilterSet",
    "FeatureMatrix",
    "class_covariance",
    "shrink_covariance",
    "fit_csp",
    "csp_features",
    "build_feature_matrix",
    "trial_scatter",
    "fit_csp_from_scatter",
    "features_from_scatter",
    "VAR_FLOOR",
]

VAR_FLOOR = 1e-12
DEFAULT_SHRINKAGE = 1e-6
# Reciprocal condition number of sigma1 + sigma2 below which we give up.
_MIN_RCOND = 1e-14


@dataclass(frozen=True)
class SpatialFilterSet:
    """``filters`` is ``C x 2M``: the M largest then the M smallest eigenvalues."""

    filters: np.ndarray
    eigenvalues: np.ndarray
    M: int
    band: tuple[float, float] | None = None

    @property
    def n_channels(self) -> int:
        return self.filters.shape[0]


@dataclass(frozen=True)
class FeatureMatrix:
    """``N x D`` features; ``layout[d]`` is the ``(band, filter)`` of column ``d``."""

    values: np.ndarray
    layout: tuple[tuple[tuple[float, float], int], ...]

    @property
    def column_names(self) -> list[str]:
        return [f"{lo:g}-{hi:g}Hz_f{m}" for (lo, hi), m in self.layout]


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, Trial):
        x = x.data
    return np.asarray(x, dtype=np.float64)


def class_covariance(
    trials: Sequence, center: bool = True, trace_normalize: bool = False
) -> np.ndarray:
    """Average ``X X^T`` over the trials of one class.

    Rows are mean-centred first unless ``center`` is false. With
    ``trace_normalize`` each trial's product is divided by its trace.
    Accepts Trials, ``C x P`` arrays, or an ``N x C x P`` array.
    """
    if isinstance(trials, np.ndarray) and trials.ndim == 3:
        X = np.asarray(trials, dtype=np.float64)
    else:
        mats = [_as_matrix(t) for t in trials]
        if not mats:
            raise EmptyClass("cannot estimate a covariance from zero trials")
        X = np.stack(mats)
    if X.shape[0] == 0:
        raise EmptyClass("cannot estimate a covariance from zero trials")
    if center:
        X = X - X.mean(axis=-1, keepdims=True)
    covs = np.einsum("ncp,ndp->ncd", X, X)
    if trace_normalize:
        covs = covs / np.trace(covs, axis1=1, axis2=2)[:, None, None]
    sigma = covs.mean(axis=0)
    return 0.5 * (sigma + sigma.T)


def shrink_covariance(sigma: np.ndarray, gamma: float = DEFAULT_SHRINKAGE) -> np.ndarray:
    """``(1 - gamma) * sigma + gamma * trace(sigma) / C * I``."""
    C = sigma.shape[0]
    return (1.0 - gamma) * sigma + gamma * (np.trace(sigma) / C) * np.eye(C)


def fit_csp(
    sigma1: np.ndarray,
    sigma2: np.ndarray,
    M: int = 2,
    shrinkage: float = DEFAULT_SHRINKAGE,
    band=None,
) -> SpatialFilterSet:
    """Solve ``sigma1 u = lambda sigma2 u`` and keep the M largest and M smallest.

    The pencil is reduced by whitening with the Cholesky factor of
    ``sigma1 + sigma2``; the symmetric eigenvalues ``rho`` of the whitened
    ``sigma1`` relate to the generalized ones by ``lambda = rho / (1 - rho)``.
    Returned filters have unit Euclidean norm.
    """
    s1 = np.asarray(sigma1, dtype=np.float64)
    s2 = np.asarray(sigma2, dtype=np.float64)
    if s1.ndim != 2 or s1.shape[0] != s1.shape[1] or s1.shape != s2.shape:
        raise DimensionMismatch(f"covariances {s1.shape} and {s2.shape} must be equal and square")
    C = s1.shape[0]
    if not 1 <= 2 * M <= C:
        raise DimensionMismatch(f"2M = {2 * M} filters requested from {C} channels")
    if shrinkage:
        s1 = shrink_covariance(s1, shrinkage)
        s2 = shrink_covariance(s2, shrinkage)

    composite = s1 + s2
    try:
        chol = linalg.cholesky(composite, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularCovariance("sigma1 + sigma2 is not positive definite") from exc
    diag = np.diag(chol)
    if diag.min() ** 2 < _MIN_RCOND * diag.max() ** 2:
        raise SingularCovariance("sigma1 + sigma2 is numerically singular")

    # whitened = L^-1 s1 L^-T
    tmp = linalg.solve_triangular(chol, s1, lower=True)
    whitened = linalg.solve_triangular(chol, tmp.T, lower=True)
    whitened = 0.5 * (whitened + whitened.T)
    rho, V = linalg.eigh(whitened)
    U = linalg.solve_triangular(chol, V, lower=True, trans="T")

    order = np.argsort(rho)[::-1]
    keep = np.concatenate([order[:M], order[-M:]])
    rho = np.clip(rho[keep], 0.0, 1.0)
    with np.errstate(divide="ignore"):
        lam = rho / (1.0 - rho)
    U = U[:, keep]
    U = U / np.linalg.norm(U, axis=0, keepdims=True)
    return SpatialFilterSet(U, lam, M, None if band is None else tuple(band))


def _log_variance(projected: np.ndarray) -> np.ndarray:
    var = projected.var(axis=-1, ddof=1)
    if np.any(var < VAR_FLOOR):
        raise DegenerateVariance(
            f"spatially filtered variance {var.min():.3g} below floor {VAR_FLOOR}"
        )
    return np.log(var)


def csp_features(trial, U: SpatialFilterSet) -> np.ndarray:
    """Log of the unbiased time variance of each spatially filtered signal."""
    X = _as_matrix(trial)
    if X.shape[0] != U.n_channels:
        raise DimensionMismatch(f"trial has {X.shape[0]} channels, filters expect {U.n_channels}")
    return _log_variance(U.filters.T @ X)


def _fit_band(filtered: np.ndarray, labels: np.ndarray, M: int, band, shrinkage, trace_normalize):
    groups = [filtered[labels == c] for c in (1, 2)]
    if any(len(g) == 0 for g in groups):
        raise EmptyClass("training mode needs trials of both classes")
    s1, s2 = (class_covariance(g, trace_normalize=trace_normalize) for g in groups)
    return fit_csp(s1, s2, M, shrinkage=shrinkage, band=band)


def build_feature_matrix(
    trials,
    bank: FilterBank,
    M: int = 2,
    filters_per_band: Sequence[SpatialFilterSet] | None = None,
    *,
    labels=None,
    shrinkage: float = DEFAULT_SHRINKAGE,
    trace_normalize: bool = False,
) -> tuple[FeatureMatrix, list[SpatialFilterSet]]:
    """Augmented features, band-major (all filters of band 0, then band 1, ...).

    ``trials`` is a :class:`TrialSet` or an already filtered ``G x N x C x P``
    array (then ``labels`` must be given in training mode). Without
    ``filters_per_band`` CSP is fit per band on these trials; with it the
    trials' labels are never read.
    """
    if isinstance(trials, TrialSet):
        filtered = filter_trialset(trials, bank)
        if filters_per_band is None:
            labels = trials.labels
    else:
        filtered = np.asarray(trials, dtype=np.float64)
    if filtered.ndim != 4 or filtered.shape[0] != len(bank):
        raise DimensionMismatch(
            f"expected {len(bank)} x N x C x P filtered trials, got {filtered.shape}"
        )

    if filters_per_band is None:
        if labels is None:
            raise InvalidConfig("training mode needs labels")
        labels = np.asarray(labels)
        filters_per_band = [
            _fit_band(filtered[g], labels, M, bank.bands[g], shrinkage, trace_normalize)
            for g in range(len(bank))
        ]
    elif len(filters_per_band) != len(bank):
        raise DimensionMismatch(f"{len(filters_per_band)} filter sets for {len(bank)} bands")

    blocks, layout = [], []
    for g, U in enumerate(filters_per_band):
        if U.n_channels != filtered.shape[2]:
            raise DimensionMismatch(
                f"band {g}: trials have {filtered.shape[2]} channels, filters expect {U.n_channels}"
            )
        projected = np.einsum("cm,ncp->nmp", U.filters, filtered[g])
        blocks.append(_log_variance(projected))
        layout.extend((bank.bands[g], m) for m in range(U.filters.shape[1]))
    return FeatureMatrix(np.concatenate(blocks, axis=1), tuple(layout)), list(filters_per_band)


# Scatter form: with S_i = Xc_i Xc_i^T (row-centred), the class covariance is
# the mean of S_i and var(u^T X_i) = u^T S_i u / (P - 1). Cross-validation
# computes S_i once per band and then never touches the raw samples again.


def trial_scatter(filtered: np.ndarray) -> np.ndarray:
    """``(..., C, P)`` trials to ``(..., C, C)`` row-centred scatter matrices."""
    X = np.asarray(filtered, dtype=np.float64)
    X = X - X.mean(axis=-1, keepdims=True)
    S = np.matmul(X, np.swapaxes(X, -1, -2))
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def fit_csp_from_scatter(
    scatter: np.ndarray,
    labels,
    M: int = 2,
    shrinkage: float = DEFAULT_SHRINKAGE,
    trace_normalize: bool = False,
    band=None,
) -> SpatialFilterSet:
    """Same filters as :func:`fit_csp` on the class covariances, from ``N x C x C`` scatters."""
    labels = np.asarray(labels)
    sig = []
    for c in (1, 2):
        S = scatter[labels == c]
        if len(S) == 0:
            raise EmptyClass("training mode needs trials of both classes")
        if trace_normalize:
            S = S / np.trace(S, axis1=1, axis2=2)[:, None, None]
        m = S.mean(axis=0)
        sig.append(0.5 * (m + m.T))
    return fit_csp(sig[0], sig[1], M, shrinkage=shrinkage, band=band)


def features_from_scatter(scatter: np.ndarray, U: SpatialFilterSet, n_samples: int) -> np.ndarray:
    """``N x 2M`` log-variances; matches :func:`csp_features` on the raw trials."""
    var = np.einsum("cm,ncd,dm->nm", U.filters, scatter, U.filters) / (n_samples - 1)
    if np.any(var < VAR_FLOOR):
        raise DegenerateVariance(
            f"spatially filtered variance {var.min():.3g} below floor {VAR_FLOOR}"
        )
    return np.log(var)
