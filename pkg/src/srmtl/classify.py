"""Linear soft-margin SVM trained by dual coordinate descent."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numba
import numpy as np

from .errors import IndexOutOfRange, InvalidConfig, NoConvergence, SingleClass

__all__ = [
    "SvmModel",
    "train_svm",
    "predict",
    "decision_function",
    "to_pm1",
    "primal_objective",
]


def to_pm1(labels) -> np.ndarray:
    """Class 1 -> +1, class 2 -> -1; already signed labels pass through."""
    labels = np.asarray(labels)
    if set(np.unique(labels).tolist()) <= {-1, 1}:
        return labels.astype(np.float64)
    return np.where(labels == 1, 1.0, -1.0)


@dataclass(frozen=True)
class SvmModel:
    weights: np.ndarray
    bias: float
    C: float
    feature_indices: np.ndarray
    means: np.ndarray
    scales: np.ndarray
    gap: float = 0.0
    epochs: int = 0

    def to_json(self) -> str:
        return json.dumps({
            "indices": [int(i) for i in self.feature_indices],
            "weights": [float(w) for w in self.weights],
            "bias": float(self.bias),
            "C": float(self.C),
            "means": [float(m) for m in self.means],
            "scales": [float(s) for s in self.scales],
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SvmModel":
        d = json.loads(text)
        return cls(
            np.asarray(d["weights"], dtype=np.float64),
            float(d["bias"]),
            float(d["C"]),
            np.asarray(d["indices"], dtype=int),
            np.asarray(d["means"], dtype=np.float64),
            np.asarray(d["scales"], dtype=np.float64),
        )


@numba.njit(cache=True)
def _dcd(X, y, C, tol, max_epochs, seed):
    # X already carries the constant bias column
    n, d = X.shape
    alpha = np.zeros(n)
    w = np.zeros(d)
    Qd = np.zeros(n)
    for i in range(n):
        for j in range(d):
            Qd[i] += X[i, j] * X[i, j]
    np.random.seed(seed)
    order = np.arange(n)
    gap = np.inf
    epoch = 0
    while epoch < max_epochs:
        epoch += 1
        np.random.shuffle(order)
        for q in range(n):
            i = order[q]
            if Qd[i] == 0.0:
                continue
            s = 0.0
            for j in range(d):
                s += w[j] * X[i, j]
            G = y[i] * s - 1.0
            a = alpha[i]
            if a == 0.0:
                PG = min(G, 0.0)
            elif a == C:
                PG = max(G, 0.0)
            else:
                PG = G
            if PG != 0.0:
                na = min(max(a - G / Qd[i], 0.0), C)
                step = (na - a) * y[i]
                for j in range(d):
                    w[j] += step * X[i, j]
                alpha[i] = na
        ww = 0.0
        for j in range(d):
            ww += w[j] * w[j]
        hinge = 0.0
        asum = 0.0
        for i in range(n):
            s = 0.0
            for j in range(d):
                s += w[j] * X[i, j]
            m = 1.0 - y[i] * s
            if m > 0.0:
                hinge += m
            asum += alpha[i]
        primal = 0.5 * ww + C * hinge
        gap = primal - (asum - 0.5 * ww)
        if gap <= tol * (1.0 + abs(primal)):
            break
    return w, alpha, gap, epoch


def primal_objective(w_aug: np.ndarray, X_aug: np.ndarray, y: np.ndarray, C: float) -> float:
    """``1/2 ||w||^2 + C sum hinge`` on bias-augmented inputs."""
    margins = 1.0 - y * (X_aug @ w_aug)
    return 0.5 * float(w_aug @ w_aug) + C * float(np.maximum(margins, 0.0).sum())


def train_svm(
    F_sel,
    y,
    C: float = 1.0,
    *,
    feature_indices=None,
    standardize: bool = True,
    tol: float = 1e-6,
    max_epochs: int = 10000,
    seed: int = 0,
) -> SvmModel:
    """Fit ``min 1/2 ||w||^2 + C sum max(0, 1 - y_i (w^T x_i + b))``.

    The bias is the weight of a constant-1 feature and is regularized with
    the rest. Dual coordinate descent visits points in a fresh seeded
    permutation each epoch and stops once the duality gap is below
    ``tol * (1 + |primal|)``; hitting ``max_epochs`` raises
    :class:`NoConvergence` with the fitted model attached.
    """
    X = np.asarray(F_sel, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = to_pm1(y)
    if X.shape[0] != y.shape[0]:
        raise InvalidConfig(f"{X.shape[0]} samples for {y.shape[0]} labels")
    if X.shape[1] < 1:
        raise InvalidConfig("need at least one feature")
    if not C > 0:
        raise InvalidConfig("C must be positive")
    if len(np.unique(y)) < 2:
        raise SingleClass("training labels contain a single class")

    if standardize:
        means = X.mean(axis=0)
        scales = X.std(axis=0)
        scales[scales == 0] = 1.0
    else:
        means = np.zeros(X.shape[1])
        scales = np.ones(X.shape[1])
    Z = (X - means) / scales
    Z_aug = np.hstack([Z, np.ones((Z.shape[0], 1))])
    w, _, gap, epochs = _dcd(Z_aug, y, float(C), float(tol), int(max_epochs), int(seed))

    idx = np.arange(X.shape[1]) if feature_indices is None else np.asarray(feature_indices, dtype=int)
    if idx.size != X.shape[1]:
        raise InvalidConfig(f"{idx.size} feature indices for {X.shape[1]} columns")
    model = SvmModel(w[:-1].copy(), float(w[-1]), float(C), idx, means, scales, float(gap), int(epochs))
    if gap > tol * (1.0 + abs(primal_objective(w, Z_aug, y, C))):
        raise NoConvergence(f"duality gap {gap:.3g} after {epochs} epochs", gap=gap, model=model)
    return model


def decision_function(model: SvmModel, F) -> np.ndarray:
    """Margins for full feature vectors (1-D) or rows of a matrix (2-D)."""
    F = np.asarray(F, dtype=np.float64)
    single = F.ndim == 1
    F2 = np.atleast_2d(F)
    if model.feature_indices.size and model.feature_indices.max() >= F2.shape[1]:
        raise IndexOutOfRange(
            f"model uses feature {model.feature_indices.max()}, vector has {F2.shape[1]}"
        )
    Z = (F2[:, model.feature_indices] - model.means) / model.scales
    m = Z @ model.weights + model.bias
    return m[0] if single else m


def predict(model: SvmModel, f_hat):
    """``(label, margin)`` with ``label = +1`` when ``margin >= 0``.

    For a matrix of feature rows both are arrays.
    """
    m = decision_function(model, f_hat)
    return np.where(m >= 0, 1, -1) if np.ndim(m) else (1 if m >= 0 else -1), m
