"""l2,1 multi-task regression with a graph-Laplacian penalty.

Minimizes::

    1/2 ||Y - F W||_F^2 + lambda1 ||W||_{2,1} + lambda2 tr(W^T F^T L F W)

by accelerated proximal gradient with a doubling line search. The plain
multi-task model is the ``lambda2 = 0`` case and the lasso is the
single-column case with ``L = 0``.

The solver works on the Gram form ``H = F^T F + 2 lambda2 F^T L F``,
``B = F^T Y`` so an iteration costs ``O(D^2 K)`` regardless of ``N``; the
grid search in :mod:`srmtl.pipeline` shares one :class:`GramCache` across all
``(lambda1, lambda2)`` cells of a fold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import DimensionMismatch, EmptySelection, InvalidConfig, NonFinite, NoProgress

__all__ = [
    "SrmtlProblem",
    "SolverState",
    "GramCache",
    "l21_norm",
    "objective",
    "smooth_objective",
    "smooth_grad",
    "prox_l21",
    "solve_srmtl",
    "solve_gram",
    "solve_gram_grid",
    "GridSolution",
    "solve_lasso",
    "select_features",
    "fallback_features",
    "kkt_threshold",
    "SPARSITY_FLOOR",
    "MAX_DOUBLINGS",
]

SPARSITY_FLOOR = 1e-12
MAX_DOUBLINGS = 60
# Relative slack on the line-search test; absorbs round-off once W(t+1) ~ P(t).
_LS_RTOL = 1e-13


@dataclass(frozen=True)
class SrmtlProblem:
    F: np.ndarray
    Y: np.ndarray
    L: np.ndarray | None = None
    lambda1: float = 0.0
    lambda2: float = 0.0

    def __post_init__(self):
        F = np.asarray(self.F, dtype=np.float64)
        Y = np.asarray(self.Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        if F.ndim != 2 or Y.ndim != 2 or F.shape[0] != Y.shape[0]:
            raise DimensionMismatch(f"F {F.shape} and Y {Y.shape} disagree on N")
        L = self.L
        if L is not None:
            L = np.asarray(L, dtype=np.float64)
            if L.shape != (F.shape[0], F.shape[0]):
                raise DimensionMismatch(f"L must be {F.shape[0]} x {F.shape[0]}, got {L.shape}")
            if not np.allclose(L, L.T, rtol=0, atol=1e-12):
                raise InvalidConfig("L must be symmetric")
        for name in ("lambda1", "lambda2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise InvalidConfig(f"{name} must be finite and >= 0, got {v}")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "L", L)

    @property
    def shape(self) -> tuple[int, int]:
        return self.F.shape[1], self.Y.shape[1]


def l21_norm(W: np.ndarray) -> float:
    return float(np.sum(np.sqrt(np.sum(np.asarray(W) ** 2, axis=1))))


def _laplacian_term(problem: SrmtlProblem, FW: np.ndarray) -> float:
    if problem.L is None or problem.lambda2 == 0:
        return 0.0
    return float(np.sum(FW * (problem.L @ FW)))


def smooth_objective(problem: SrmtlProblem, W) -> float:
    W = np.asarray(W, dtype=np.float64).reshape(problem.shape)
    FW = problem.F @ W
    return 0.5 * float(np.sum((problem.Y - FW) ** 2)) + problem.lambda2 * _laplacian_term(problem, FW)


def objective(problem: SrmtlProblem, W) -> float:
    """Full objective, evaluated directly from ``F``, ``Y`` and ``L``."""
    W = np.asarray(W, dtype=np.float64).reshape(problem.shape)
    return smooth_objective(problem, W) + problem.lambda1 * l21_norm(W)


def smooth_grad(problem: SrmtlProblem, W) -> np.ndarray:
    """``F^T (F W - Y) + 2 lambda2 F^T L F W``."""
    W = np.asarray(W, dtype=np.float64).reshape(problem.shape)
    FW = problem.F @ W
    g = problem.F.T @ (FW - problem.Y)
    if problem.L is not None and problem.lambda2 != 0:
        g = g + 2.0 * problem.lambda2 * (problem.F.T @ (problem.L @ FW))
    return g


def prox_l21(V: np.ndarray, tau: float) -> np.ndarray:
    """Row-wise group soft-thresholding: ``max(0, 1 - tau / ||v_d||) v_d``."""
    V = np.asarray(V, dtype=np.float64)
    if tau == 0:
        return V.copy()
    norms = np.sqrt(np.sum(V ** 2, axis=1))
    scale = np.zeros_like(norms)
    keep = norms > tau
    scale[keep] = 1.0 - tau / norms[keep]
    return V * scale[:, None]


@dataclass
class SolverState:
    """Iterates and traces of one APG run.

    ``objective[0]`` is the value at the initial point; ``objective[t]``,
    ``normalized_error[t-1]`` and ``mu_trace[t-1]`` belong to iteration ``t``.
    """

    W: np.ndarray
    W_prev: np.ndarray
    alpha: float
    mu: float
    iteration: int = 0
    objective: list = field(default_factory=list)
    normalized_error: list = field(default_factory=list)
    mu_trace: list = field(default_factory=list)
    majorization_gap: list = field(default_factory=list)
    converged: bool = False

    def trace_rows(self):
        for t in range(1, len(self.objective)):
            yield t, self.objective[t], self.normalized_error[t - 1], self.mu_trace[t - 1]


def _sym(A):
    return 0.5 * (A + A.T)


class GramCache:
    """``F^T F``, ``F^T L F``, ``F^T Y`` and ``||Y||^2 / 2`` for one data split."""

    def __init__(self, F, Y, L=None):
        F = np.asarray(F, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        self.FtF = _sym(F.T @ F)
        self.FtY = F.T @ Y
        self.FtLF = None if L is None else _sym(F.T @ (np.asarray(L, dtype=np.float64) @ F))
        self.const = 0.5 * float(np.sum(Y ** 2))
        self._hessians = {}

    @classmethod
    def from_problem(cls, problem: SrmtlProblem) -> "GramCache":
        return cls(problem.F, problem.Y, problem.L)

    def hessian(self, lambda2: float) -> np.ndarray:
        if self.FtLF is None or lambda2 == 0:
            return self.FtF
        H = self._hessians.get(lambda2)
        if H is None:
            H = self.FtF + 2.0 * lambda2 * self.FtLF
            self._hessians[lambda2] = H
        return H


def solve_gram(
    H: np.ndarray,
    B: np.ndarray,
    const: float,
    lambda1: float,
    T: int = 200,
    tol: float = 1e-6,
    W0: np.ndarray | None = None,
    mu0: float = 1.0,
) -> tuple[np.ndarray, SolverState]:
    """APG on ``1/2 tr(W^T H W) - tr(W^T B) + const + lambda1 ||W||_{2,1}``.

    Starts from ``W(0) = W(1) = W0`` (all ones by default) with ``mu = mu0``
    and ``alpha(0) = 1``. ``mu`` doubles until the quadratic model at the
    search point majorizes the new iterate and is never reset. Stops after
    ``T`` iterations or when ``|F(t) - F(t+1)| / F(t) < tol``.
    """
    if T < 1:
        raise InvalidConfig("T must be >= 1")
    D, K = B.shape
    W = np.ones((D, K)) if W0 is None else np.array(W0, dtype=np.float64).reshape(D, K)
    W_prev = W
    HW = H @ W
    HW_prev = HW
    mu = float(mu0)
    alpha_prev = 1.0

    def value(W, HW):
        return 0.5 * float(np.vdot(W, HW)) - float(np.vdot(W, B)) + const

    obj = value(W, HW) + lambda1 * l21_norm(W)
    state = SolverState(W, W_prev, alpha_prev, mu, objective=[obj])
    if not math.isfinite(obj):
        raise NonFinite("initial objective is not finite", trace=state)

    for t in range(1, T + 1):
        alpha = (1.0 + math.sqrt(1.0 + 4.0 * alpha_prev ** 2)) / 2.0
        beta = (alpha_prev - 1.0) / alpha
        P = W + beta * (W - W_prev)
        HP = HW + beta * (HW - HW_prev)
        gP = HP - B
        fP = value(P, HP)
        if not (math.isfinite(fP) and np.all(np.isfinite(gP))):
            raise NonFinite(f"non-finite smooth part at iteration {t}", trace=state)

        doublings = 0
        while True:
            W_new = prox_l21(P - gP / mu, lambda1 / mu)
            HW_new = H @ W_new
            f_new = value(W_new, HW_new)
            step = W_new - P
            model = fP + float(np.vdot(step, gP)) + 0.5 * mu * float(np.vdot(step, step))
            if f_new <= model + _LS_RTOL * max(1.0, abs(fP)):
                break
            mu *= 2.0
            doublings += 1
            if doublings > MAX_DOUBLINGS:
                raise NoProgress(f"line search exceeded {MAX_DOUBLINGS} doublings at iteration {t}")

        W_prev, W = W, W_new
        HW_prev, HW = HW, HW_new
        alpha_prev = alpha

        new_obj = f_new + lambda1 * l21_norm(W)
        if not math.isfinite(new_obj):
            raise NonFinite(f"objective became non-finite at iteration {t}", trace=state)
        if obj != 0:
            nerr = abs(obj - new_obj) / abs(obj)
        else:
            nerr = 0.0 if new_obj == 0 else math.inf
        obj = new_obj

        state.objective.append(obj)
        state.normalized_error.append(nerr)
        state.mu_trace.append(mu)
        state.majorization_gap.append(model - f_new)
        state.iteration = t
        if nerr < tol:
            state.converged = True
            break

    state.W, state.W_prev, state.alpha, state.mu = W, W_prev, alpha_prev, mu
    return W, state


@dataclass(frozen=True)
class GridSolution:
    """Solutions for every ``(lambda2, lambda1)`` cell; ``W[j, i]`` is ``D x K``."""

    W: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    objective: np.ndarray


# The compiled kernels keep iterates transposed (K x D) so the inner loops run
# along D with unit stride.


@numba.njit(cache=True)
def _hmul(H, W, nz, nnz, out):
    # out = W H for symmetric H, touching only the nonzero columns of W
    D = W.shape[1]
    if nnz == D:
        out[:, :] = np.dot(W, H)
    elif nnz == 0:
        out[:, :] = 0.0
    else:
        rows = nz[:nnz]
        out[:, :] = np.dot(W[:, rows], H[rows])


@numba.njit(cache=True)
def _quad(W, HW, B, const):
    s = 0.0
    K, D = W.shape
    for k in range(K):
        for i in range(D):
            s += W[k, i] * (0.5 * HW[k, i] - B[k, i])
    return s + const


@numba.njit(cache=True)
def _l21(W):
    K, D = W.shape
    s = 0.0
    for i in range(D):
        r = 0.0
        for k in range(K):
            r += W[k, i] * W[k, i]
        s += np.sqrt(r)
    return s


@numba.njit(cache=True)
def _apg_cell(H, B, const, lam1, T, tol, mu0, rtol, max_doublings, out):
    """One APG run from all ones, result written into ``out`` (K x D).

    Returns (iterations, converged, objective, status) with status 0 ok,
    1 non-finite, 2 line search stalled.
    """
    K, D = B.shape
    W = np.ones((K, D))
    W_prev = W.copy()
    nz = np.arange(D)
    HW = np.empty((K, D))
    _hmul(H, W, nz, D, HW)
    HW_prev = HW.copy()
    P = np.empty((K, D))
    HP = np.empty((K, D))
    gP = np.empty((K, D))
    Wn = np.empty((K, D))
    HWn = np.empty((K, D))
    norms = np.empty(D)
    mu = mu0
    alpha_prev = 1.0
    obj = _quad(W, HW, B, const) + lam1 * _l21(W)
    if not np.isfinite(obj):
        return 0, False, obj, 1
    iters = 0
    converged = False
    fn = 0.0
    for t in range(1, T + 1):
        alpha = (1.0 + np.sqrt(1.0 + 4.0 * alpha_prev * alpha_prev)) / 2.0
        beta = (alpha_prev - 1.0) / alpha
        for k in range(K):
            for i in range(D):
                P[k, i] = W[k, i] + beta * (W[k, i] - W_prev[k, i])
                HP[k, i] = HW[k, i] + beta * (HW[k, i] - HW_prev[k, i])
                gP[k, i] = HP[k, i] - B[k, i]
        fP = _quad(P, HP, B, const)
        if not np.isfinite(fP):
            return iters, False, obj, 1
        slack = rtol * max(1.0, abs(fP))
        doublings = 0
        while True:
            tau = lam1 / mu
            norms[:] = 0.0
            for k in range(K):
                for i in range(D):
                    v = P[k, i] - gP[k, i] / mu
                    Wn[k, i] = v
                    norms[i] += v * v
            nnz = 0
            for i in range(D):
                r = np.sqrt(norms[i])
                if r > tau:
                    norms[i] = 1.0 - tau / r
                    nz[nnz] = i
                    nnz += 1
                else:
                    norms[i] = 0.0
            for k in range(K):
                for i in range(D):
                    Wn[k, i] *= norms[i]
            _hmul(H, Wn, nz, nnz, HWn)
            fn = _quad(Wn, HWn, B, const)
            lin = 0.0
            sq = 0.0
            for k in range(K):
                for i in range(D):
                    st = Wn[k, i] - P[k, i]
                    lin += st * gP[k, i]
                    sq += st * st
            if fn <= fP + lin + 0.5 * mu * sq + slack:
                break
            mu *= 2.0
            doublings += 1
            if doublings > max_doublings:
                return iters, False, obj, 2
        W_prev, W, Wn = W, Wn, W_prev
        HW_prev, HW, HWn = HW, HWn, HW_prev
        alpha_prev = alpha
        new_obj = fn + lam1 * _l21(W)
        if not np.isfinite(new_obj):
            return iters, False, obj, 1
        if obj != 0.0:
            nerr = abs(obj - new_obj) / abs(obj)
        elif new_obj == 0.0:
            nerr = 0.0
        else:
            nerr = np.inf
        obj = new_obj
        iters = t
        if nerr < tol:
            converged = True
            break
    out[:, :] = W
    return iters, converged, obj, 0


@numba.njit(cache=True)
def _apg_grid(H, B, const, lam1s, T, tol, mu0, rtol, max_doublings):
    n2, D, _ = H.shape
    n1 = lam1s.size
    K = B.shape[0]
    W = np.zeros((n2, n1, K, D))
    iters = np.zeros((n2, n1), dtype=np.int64)
    conv = np.zeros((n2, n1), dtype=np.bool_)
    obj = np.zeros((n2, n1))
    status = np.zeros((n2, n1), dtype=np.int64)
    for j in range(n2):
        for i in range(n1):
            it, c, o, s = _apg_cell(H[j], B, const, lam1s[i], T, tol, mu0, rtol, max_doublings, W[j, i])
            iters[j, i] = it
            conv[j, i] = c
            obj[j, i] = o
            status[j, i] = s
    return W, iters, conv, obj, status


def solve_gram_grid(
    H: np.ndarray,
    B: np.ndarray,
    const: float,
    lambda1s,
    T: int = 200,
    tol: float = 1e-6,
    mu0: float = 1.0,
) -> GridSolution:
    """Run the :func:`solve_gram` algorithm on every ``(lambda2, lambda1)`` cell.

    ``H`` is ``n2 x D x D`` (one Hessian per ``lambda2``, symmetric) and
    ``lambda1s`` has ``n1`` entries. Cells are independent runs from the
    all-ones start; this compiled path skips zero rows of ``W`` when
    multiplying by ``H``, which is where its speed comes from.
    """
    if T < 1:
        raise InvalidConfig("T must be >= 1")
    H = np.ascontiguousarray(H, dtype=np.float64)
    if H.ndim == 2:
        H = H[None]
    lam1 = np.ascontiguousarray(lambda1s, dtype=np.float64).ravel()
    Bt = np.ascontiguousarray(np.asarray(B, dtype=np.float64).T)
    W, iters, conv, obj, status = _apg_grid(
        H, Bt, float(const), lam1, int(T), float(tol), float(mu0), _LS_RTOL, MAX_DOUBLINGS
    )
    if np.any(status == 1):
        raise NonFinite("objective became non-finite in a grid cell")
    if np.any(status == 2):
        raise NoProgress(f"line search exceeded {MAX_DOUBLINGS} doublings in a grid cell")
    return GridSolution(np.ascontiguousarray(W.transpose(0, 1, 3, 2)), iters, conv, obj)


def solve_srmtl(
    problem: SrmtlProblem,
    T: int = 200,
    tol: float = 1e-6,
    W0: np.ndarray | None = None,
    mu0: float = 1.0,
) -> tuple[np.ndarray, SolverState]:
    cache = GramCache.from_problem(problem)
    return solve_gram(
        cache.hessian(problem.lambda2), cache.FtY, cache.const, problem.lambda1,
        T=T, tol=tol, W0=W0, mu0=mu0,
    )


def solve_lasso(F, y, lam: float, T: int = 200, tol: float = 1e-6, **kw) -> np.ndarray:
    """``argmin 1/2 ||y - F w||^2 + lam ||w||_1`` via the single-task solver."""
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    W, _ = solve_srmtl(SrmtlProblem(F, y, None, lam, 0.0), T=T, tol=tol, **kw)
    return W[:, 0]


def kkt_threshold(F, Y) -> float:
    """Smallest ``lambda1`` for which ``W = 0`` is optimal when ``lambda2 = 0``."""
    G = np.asarray(F).T @ np.asarray(Y, dtype=np.float64).reshape(len(F), -1)
    return float(np.max(np.sqrt(np.sum(G ** 2, axis=1))))


def select_features(W, floor: float = SPARSITY_FLOOR) -> np.ndarray:
    """Ascending indices of rows with norm above ``floor``."""
    if floor < 0:
        raise InvalidConfig("floor must be >= 0")
    norms = np.sqrt(np.sum(np.asarray(W, dtype=np.float64).reshape(len(W), -1) ** 2, axis=1))
    idx = np.flatnonzero(norms > floor)
    if idx.size == 0:
        raise EmptySelection("no feature row survived the sparsity floor")
    return idx


def fallback_features(W) -> np.ndarray:
    """Top ``ceil(D / 10)`` rows by norm (ties to the lower index), ascending."""
    W = np.asarray(W, dtype=np.float64).reshape(len(W), -1)
    norms = np.sqrt(np.sum(W ** 2, axis=1))
    n = max(1, math.ceil(W.shape[0] / 10))
    order = np.lexsort((np.arange(len(norms)), -norms))
    return np.sort(order[:n])
