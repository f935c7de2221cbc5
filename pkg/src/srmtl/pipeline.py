"""Nested cross-validation for srMTL and its baselines.

Every stage that learns something (CSP filters, subclass partition, z-score
statistics, regression weights, SVM) is fit on the training side of a split
only. The outer loop is ``repeats`` rounds of stratified ``outer_folds``-fold
CV; inside each training split a stratified ``inner_folds``-fold loop scores
every hyperparameter cell and the best mean inner accuracy wins, ties going
to the smaller ``lambda1`` and then the smaller ``lambda2``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import multiprocessing

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

import numpy as np
from sklearn.model_selection import StratifiedKFold

from .classify import SvmModel, predict, to_pm1, train_svm
from .csp import DEFAULT_SHRINKAGE, features_from_scatter, fit_csp_from_scatter, trial_scatter
from .dataio import SynthConfig, TrialSet
from .errors import EmptySelection, InvalidConfig, NoConvergence, ZeroVariance
from .mtl import GramCache, SPARSITY_FLOOR, fallback_features, select_features, solve_gram_grid
from .signal import BandSpec, DEFAULT_BANDS, design_filter_bank, filter_trialset
from .subclass import ApConfig, build_laplacian, build_similarity, discover_subclasses, encode_labels

__all__ = [
    "METHODS",
    "LAMBDA_GRID",
    "PipelineConfig",
    "FoldResult",
    "CvReport",
    "ComparisonReport",
    "PreparedData",
    "prepare",
    "run_crossval",
    "run_method_comparison",
    "evaluate_split",
    "fold_plan",
    "r_square",
    "subject_table",
    "provenance",
    "worker_count",
    "WORKERS_ENV",
]

METHODS = ("csp-only", "sfbcsp", "mtl", "srmtl")
LAMBDA_GRID = (0.01, 0.05, 0.1, 0.5, 1.0, 5.0) + tuple(float(v) for v in range(10, 61, 5))
WORKERS_ENV = "SRMTL_WORKERS"


@dataclass(frozen=True)
class PipelineConfig:
    bands: BandSpec = DEFAULT_BANDS
    single_band: tuple[float, float] = (4.0, 40.0)
    filter_order: int = 4
    M: int = 2
    shrinkage: float = DEFAULT_SHRINKAGE
    trace_normalize: bool = False
    ap: ApConfig = ApConfig()
    lambda1_grid: tuple[float, ...] = LAMBDA_GRID
    lambda2_grid: tuple[float, ...] = LAMBDA_GRID
    max_iters: int = 200
    tol: float = 1e-6
    sparsity_floor: float = SPARSITY_FLOOR
    svm_C: float = 1.0
    svm_tol: float = 1e-6
    svm_max_epochs: int = 20000
    outer_folds: int = 5
    repeats: int = 5
    inner_folds: int = 5
    seed: int = 0
    method: str = "srmtl"
    methods: tuple[str, ...] = METHODS
    synth: SynthConfig | None = None
    manifest: str | None = None

    def __post_init__(self):
        for name in ("lambda1_grid", "lambda2_grid"):
            grid = tuple(float(v) for v in getattr(self, name))
            if not grid:
                raise InvalidConfig(f"{name} must be non-empty")
            if any(not (math.isfinite(v) and v >= 0) for v in grid):
                raise InvalidConfig(f"{name} values must be finite and >= 0")
            object.__setattr__(self, name, tuple(sorted(set(grid))))
        if self.outer_folds < 2 or self.inner_folds < 2:
            raise InvalidConfig("fold counts must be >= 2")
        if self.repeats < 1:
            raise InvalidConfig("repeats must be >= 1")
        if self.method not in METHODS:
            raise InvalidConfig(f"method must be one of {METHODS}, got {self.method!r}")
        methods = tuple(self.methods)
        bad = [m for m in methods if m not in METHODS]
        if bad or not methods:
            raise InvalidConfig(f"methods must be a non-empty subset of {METHODS}, got {methods}")
        object.__setattr__(self, "methods", methods)
        if self.M < 1:
            raise InvalidConfig("M must be >= 1")
        if not self.svm_C > 0:
            raise InvalidConfig("svm C must be positive")
        if self.max_iters < 1:
            raise InvalidConfig("max_iters must be >= 1")
        lo, hi = self.single_band
        object.__setattr__(self, "single_band", (float(lo), float(hi)))
        if self.seed < 0:
            raise InvalidConfig("seed must be non-negative")

    # config files are sectioned TOML; these two map sections <-> fields
    _SECTIONS = {
        "bands": None,
        "csp": {"M": "M", "shrinkage": "shrinkage", "trace_normalize": "trace_normalize",
                "single_band": "single_band", "filter_order": "filter_order"},
        "mtl": {"lambda1_grid": "lambda1_grid", "lambda2_grid": "lambda2_grid",
                "max_iters": "max_iters", "tol": "tol", "sparsity_floor": "sparsity_floor"},
        "svm": {"C": "svm_C", "tol": "svm_tol", "max_epochs": "svm_max_epochs"},
        "cv": {"outer_folds": "outer_folds", "repeats": "repeats", "inner_folds": "inner_folds"},
    }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        kw = {}
        for key in ("seed", "method", "methods", "manifest"):
            if key in d:
                kw[key] = d.pop(key)
        if "bands" in d:
            kw["bands"] = BandSpec.from_dict(d.pop("bands"))
        if "ap" in d:
            kw["ap"] = ApConfig.from_dict(d.pop("ap"))
        if "synth" in d:
            kw["synth"] = SynthConfig.from_dict(d.pop("synth"))
        for sec, mapping in cls._SECTIONS.items():
            if mapping is None or sec not in d:
                continue
            body = dict(d.pop(sec))
            unknown = set(body) - set(mapping)
            if unknown:
                raise InvalidConfig(f"unknown keys in [{sec}]: {sorted(unknown)}")
            for k, v in body.items():
                kw[mapping[k]] = tuple(v) if isinstance(v, list) else v
        if d:
            raise InvalidConfig(f"unknown config keys: {sorted(d)}")
        if isinstance(kw.get("methods"), list):
            kw["methods"] = tuple(kw["methods"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from exc

    @classmethod
    def from_toml(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            with path.open("rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError as exc:
            from .errors import MissingFile

            raise MissingFile(f"config file {path} not found") from exc
        except tomllib.TOMLDecodeError as exc:
            raise InvalidConfig(f"{path}: {exc}") from exc
        cfg = cls.from_dict(data)
        if cfg.manifest is not None and not Path(cfg.manifest).is_absolute():
            cfg = replace(cfg, manifest=str((path.parent / cfg.manifest).resolve()))
        return cfg

    def to_dict(self) -> dict:
        out = {
            "seed": self.seed,
            "method": self.method,
            "methods": list(self.methods),
            "bands": self.bands.to_dict(),
            "ap": asdict(self.ap),
        }
        for sec, mapping in self._SECTIONS.items():
            if mapping is None:
                continue
            out[sec] = {k: (list(getattr(self, f)) if isinstance(getattr(self, f), tuple)
                            else getattr(self, f)) for k, f in mapping.items()}
        if self.synth is not None:
            out["synth"] = {k: (list(v) if isinstance(v, tuple) else v)
                            for k, v in asdict(self.synth).items()}
        if self.manifest is not None:
            out["manifest"] = self.manifest
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------- provenance


def _blas_threads() -> int:
    try:
        from threadpoolctl import threadpool_info
    except ImportError:  # pragma: no cover
        return -1
    counts = [int(i.get("num_threads", 1)) for i in threadpool_info() if i.get("user_api") == "blas"]
    return max(counts) if counts else 1


def worker_count() -> int:
    """Process workers for fold-level parallelism, capped by ``SRMTL_WORKERS``."""
    n = os.cpu_count() or 1
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            cap = int(env)
        except ValueError as exc:
            raise InvalidConfig(f"{WORKERS_ENV} must be an integer, got {env!r}") from exc
        if cap < 1:
            raise InvalidConfig(f"{WORKERS_ENV} must be >= 1")
        n = min(n, cap)
    return n


def provenance(cfg: PipelineConfig | None = None, seed: int | None = None) -> dict:
    import numba
    import scipy
    import sklearn

    from . import __version__

    return {
        "config_hash": cfg.config_hash() if cfg is not None else None,
        "seed": seed if seed is not None else (cfg.seed if cfg is not None else None),
        "versions": {
            "srmtl": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__,
            "numba": numba.__version__,
        },
        "blas_threads": _blas_threads(),
        "workers": worker_count(),
    }


# ------------------------------------------------------------------- data prep


@dataclass
class PreparedData:
    """Per-band scatter matrices of every trial, computed once per dataset.

    Filtering is per-trial and label-free, so doing it up front cannot leak.
    """

    scatter: np.ndarray          # G x N x C x C, filter bank
    single_scatter: np.ndarray   # 1 x N x C x C, single broad band
    bands: tuple
    single_band: tuple
    labels: np.ndarray
    n_samples: int


def prepare(dataset: TrialSet, cfg: PipelineConfig) -> PreparedData:
    bank = design_filter_bank(cfg.bands, dataset.fs, cfg.filter_order)
    single = design_filter_bank([cfg.single_band], dataset.fs, cfg.filter_order)
    scatter = np.stack([trial_scatter(f) for f in filter_trialset(dataset, bank)])
    single_scatter = np.stack([trial_scatter(f) for f in filter_trialset(dataset, single)])
    return PreparedData(scatter, single_scatter, bank.bands, single.bands,
                        np.asarray(dataset.labels), dataset.n_samples)


def _features(data: PreparedData, train, test, train_labels, cfg, single: bool):
    scat = data.single_scatter if single else data.scatter
    bands = data.single_band if single else data.bands
    tr, te = [], []
    for g in range(scat.shape[0]):
        U = fit_csp_from_scatter(scat[g, train], train_labels, cfg.M, cfg.shrinkage,
                                 cfg.trace_normalize, bands[g])
        tr.append(features_from_scatter(scat[g, train], U, data.n_samples))
        te.append(features_from_scatter(scat[g, test], U, data.n_samples))
    return np.hstack(tr), np.hstack(te)


def _zscore(F_train, F_test):
    mean = F_train.mean(axis=0)
    sd = F_train.std(axis=0)
    sd[sd == 0] = 1.0
    return (F_train - mean) / sd, (F_test - mean) / sd


# ---------------------------------------------------------------- split model


class _Timer:
    def __init__(self):
        self.t = {}

    def add(self, key, start):
        self.t[key] = self.t.get(key, 0.0) + time.perf_counter() - start


@dataclass
class _Split:
    """Everything learned from one training side that does not depend on lambda."""

    F_train: np.ndarray
    F_test: np.ndarray
    Z_train: np.ndarray
    y_train: np.ndarray
    K: int
    gram: GramCache | None


def _build_split(data, train, test, train_labels, method, cfg, timer) -> _Split:
    t0 = time.perf_counter()
    F_tr, F_te = _features(data, train, test, train_labels, cfg, single=(method == "csp-only"))
    timer.add("csp", t0)
    y = to_pm1(train_labels)
    if method == "csp-only":
        return _Split(F_tr, F_te, F_tr, y, 2, None)
    Z_tr, _ = _zscore(F_tr, F_te)
    if method == "sfbcsp":
        Y, L, K = y[:, None], None, 1
    else:
        t0 = time.perf_counter()
        part = discover_subclasses(F_tr, train_labels, cfg.ap)
        Y = encode_labels(part)
        L = build_laplacian(build_similarity(part)) if method == "srmtl" else None
        K = part.K
        timer.add("cluster", t0)
    return _Split(F_tr, F_te, Z_tr, y, K, GramCache(Z_tr, Y, L))


def _lambda2_values(method, cfg):
    return cfg.lambda2_grid if method == "srmtl" else (0.0,)


def _solve(split: _Split, lam1s, lam2s, cfg, timer):
    t0 = time.perf_counter()
    H = np.stack([split.gram.hessian(l2) for l2 in lam2s])
    sol = solve_gram_grid(H, split.gram.FtY, split.gram.const, lam1s, T=cfg.max_iters, tol=cfg.tol)
    timer.add("solve", t0)
    return sol


def _selection(W, cfg):
    try:
        return select_features(W, cfg.sparsity_floor), False
    except EmptySelection:
        return fallback_features(W), True


def _svm(F_sel, y, idx, cfg, timer) -> SvmModel:
    t0 = time.perf_counter()
    try:
        model = train_svm(F_sel, y, cfg.svm_C, feature_indices=idx, tol=cfg.svm_tol,
                          max_epochs=cfg.svm_max_epochs, seed=cfg.seed)
    except NoConvergence as exc:
        # the iterate is still a usable classifier; the gap is reported upstream
        model = exc.model
    timer.add("svm", t0)
    return model


def _accuracy(model, F_test, y_test) -> float:
    labels, _ = predict(model, F_test)
    return float(np.mean(labels == y_test))


def _score_grid(split: _Split, val_labels, method, cfg, timer) -> np.ndarray:
    """Validation accuracy for every (lambda2, lambda1) cell of one inner split."""
    y_val = to_pm1(val_labels)
    lam2s = _lambda2_values(method, cfg)
    sol = _solve(split, cfg.lambda1_grid, lam2s, cfg, timer)
    acc = np.zeros(sol.iterations.shape)
    cache = {}
    for j in range(len(lam2s)):
        for i in range(len(cfg.lambda1_grid)):
            idx, _ = _selection(sol.W[j, i], cfg)
            key = idx.tobytes()
            if key not in cache:
                model = _svm(split.F_train[:, idx], split.y_train, idx, cfg, timer)
                cache[key] = _accuracy(model, split.F_test, y_val)
            acc[j, i] = cache[key]
    return acc


def _pick(mean_acc: np.ndarray, lam1s, lam2s):
    # lambda grids are sorted ascending, so scanning lambda1-major finds the tie winner
    best = None
    for i in range(len(lam1s)):
        for j in range(len(lam2s)):
            v = round(float(mean_acc[j, i]), 12)
            if best is None or v > best[0]:
                best = (v, j, i)
    return best


@dataclass(frozen=True)
class FoldResult:
    repeat: int
    fold: int
    method: str
    accuracy: float
    n_test: int
    lambda1: float | None
    lambda2: float | None
    selected: tuple[int, ...]
    fallback: bool
    iterations: int
    converged: bool
    n_subclasses: int
    inner_accuracy: float | None
    svm_gap: float
    timing: dict = field(default_factory=dict, compare=False)


def _fold_seed(seed, *keys) -> int:
    ss = np.random.SeedSequence([seed, *keys])
    return int(ss.generate_state(1)[0] % (2 ** 31 - 1))


def evaluate_split(data: PreparedData, train, test, train_labels, method, cfg: PipelineConfig,
                   inner_seed: int = 0, timer: _Timer | None = None):
    """Fit ``method`` on ``train`` (labels ``train_labels``) and predict ``test``.

    Test labels are not an argument, so nothing downstream can read them.
    Returns ``(predicted labels in {1, 2}, info dict)``.
    """
    timer = timer or _Timer()
    train = np.asarray(train)
    test = np.asarray(test)
    train_labels = np.asarray(train_labels)
    lam1s = cfg.lambda1_grid
    lam2s = _lambda2_values(method, cfg)
    info = {"lambda1": None, "lambda2": None, "inner_accuracy": None, "fallback": False,
            "iterations": 0, "converged": True}

    if method != "csp-only":
        skf = StratifiedKFold(cfg.inner_folds, shuffle=True, random_state=inner_seed)
        total = np.zeros((len(lam2s), len(lam1s)))
        for itr, iva in skf.split(np.zeros(len(train)), train_labels):
            inner = _build_split(data, train[itr], train[iva], train_labels[itr], method, cfg, timer)
            total += _score_grid(inner, train_labels[iva], method, cfg, timer)
        mean_acc = total / cfg.inner_folds
        best_acc, j, i = _pick(mean_acc, lam1s, lam2s)
        info.update(lambda1=lam1s[i], lambda2=lam2s[j], inner_accuracy=best_acc)

    split = _build_split(data, train, test, train_labels, method, cfg, timer)
    if method == "csp-only":
        idx = np.arange(split.F_train.shape[1])
    else:
        sol = _solve(split, (info["lambda1"],), (info["lambda2"],), cfg, timer)
        idx, fb = _selection(sol.W[0, 0], cfg)
        info.update(fallback=fb, iterations=int(sol.iterations[0, 0]),
                    converged=bool(sol.converged[0, 0]))
    model = _svm(split.F_train[:, idx], split.y_train, idx, cfg, timer)
    pm, _ = predict(model, split.F_test)
    info.update(selected=tuple(int(v) for v in idx), n_subclasses=split.K, svm_gap=model.gap,
                model=model)
    return np.where(pm == 1, 1, 2), info


def fold_plan(labels, cfg: PipelineConfig):
    """``(repeat, fold, train_idx, test_idx)`` for every outer split; shared by all methods."""
    labels = np.asarray(labels)
    out = []
    for r in range(cfg.repeats):
        skf = StratifiedKFold(cfg.outer_folds, shuffle=True, random_state=_fold_seed(cfg.seed, r))
        for f, (tr, te) in enumerate(skf.split(np.zeros(len(labels)), labels)):
            out.append((r, f, tr, te))
    return out


def _run_fold(data, r, f, tr, te, method, cfg) -> FoldResult:
    timer = _Timer()
    pred, info = evaluate_split(data, tr, te, data.labels[tr], method, cfg,
                                inner_seed=_fold_seed(cfg.seed, r, f, 1), timer=timer)
    acc = float(np.mean(pred == data.labels[te]))
    return FoldResult(
        r, f, method, acc, len(te), info["lambda1"], info["lambda2"], info["selected"],
        info["fallback"], info["iterations"], info["converged"], info["n_subclasses"],
        info["inner_accuracy"], float(info["svm_gap"]), timer.t,
    )


# fork workers inherit the prepared data instead of pickling it per task
_SHARED: dict = {}


def _worker(args):
    r, f, tr, te, method = args
    return _run_fold(_SHARED["data"], r, f, tr, te, method, _SHARED["cfg"])


def _run_folds(data, plan, methods, cfg, workers):
    tasks = [(r, f, tr, te, m) for m in methods for (r, f, tr, te) in plan]
    if workers <= 1 or len(tasks) == 1:
        return [_run_fold(data, r, f, tr, te, m, cfg) for (r, f, tr, te, m) in tasks]
    _SHARED.update(data=data, cfg=cfg)
    try:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(workers, mp_context=ctx) as pool:
            return list(pool.map(_worker, tasks))
    finally:
        _SHARED.clear()


# -------------------------------------------------------------------- reports


@dataclass(frozen=True)
class CvReport:
    method: str
    folds: tuple[FoldResult, ...]
    provenance: dict
    repeats: int
    outer_folds: int

    @property
    def accuracies(self) -> np.ndarray:
        """``repeats x outer_folds`` matrix of held-out accuracies."""
        a = np.zeros((self.repeats, self.outer_folds))
        for fr in self.folds:
            a[fr.repeat, fr.fold] = fr.accuracy
        return a

    @property
    def mean(self) -> float:
        return float(self.accuracies.mean())

    @property
    def std(self) -> float:
        return float(self.accuracies.std(ddof=1)) if len(self.folds) > 1 else 0.0

    @property
    def timing(self) -> dict:
        tot = {}
        for fr in self.folds:
            for k, v in fr.timing.items():
                tot[k] = tot.get(k, 0.0) + v
        return tot

    CSV_FIELDS = ("repeat", "fold", "method", "accuracy", "n_test", "lambda1", "lambda2",
                  "n_selected", "selected", "fallback", "iterations", "converged",
                  "n_subclasses", "inner_accuracy", "svm_gap")

    def to_csv(self) -> str:
        buf = io.StringIO()
        _write_provenance_comment(buf, self.provenance)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_FIELDS)
        for fr in self.folds:
            w.writerow([
                fr.repeat, fr.fold, fr.method, f"{fr.accuracy:.6f}", fr.n_test,
                _fmt(fr.lambda1), _fmt(fr.lambda2), len(fr.selected),
                ";".join(map(str, fr.selected)), int(fr.fallback), fr.iterations,
                int(fr.converged), fr.n_subclasses, _fmt(fr.inner_accuracy), f"{fr.svm_gap:.3e}",
            ])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "provenance": self.provenance,
            "method": self.method,
            "mean_accuracy": round(self.mean, 6),
            "std_accuracy": round(self.std, 6),
            "n_folds": len(self.folds),
            "accuracies": [[round(v, 6) for v in row] for row in self.accuracies.tolist()],
            "fallback_folds": [[fr.repeat, fr.fold] for fr in self.folds if fr.fallback],
            "chosen_lambdas": [[fr.lambda1, fr.lambda2] for fr in self.folds],
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{self.method}_folds.csv", out / f"{self.method}_summary.json",
                 out / f"{self.method}_timing.json"]
        paths[0].write_text(self.to_csv())
        paths[1].write_text(self.to_json())
        paths[2].write_text(json.dumps({"provenance": self.provenance, "seconds": self.timing},
                                       indent=2, sort_keys=True) + "\n")
        return paths


@dataclass(frozen=True)
class ComparisonReport:
    reports: tuple[CvReport, ...]
    provenance: dict

    def __getitem__(self, method) -> CvReport:
        for r in self.reports:
            if r.method == method:
                return r
        raise KeyError(method)

    @property
    def methods(self) -> tuple[str, ...]:
        return tuple(r.method for r in self.reports)

    def table(self) -> str:
        buf = io.StringIO()
        _write_provenance_comment(buf, self.provenance)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("method", "mean_accuracy", "std_accuracy", "n_folds"))
        for r in self.reports:
            w.writerow((r.method, f"{r.mean:.6f}", f"{r.std:.6f}", len(r.folds)))
        return buf.getvalue()

    def to_json(self) -> str:
        body = {"provenance": self.provenance,
                "methods": {r.method: {"mean_accuracy": round(r.mean, 6),
                                       "std_accuracy": round(r.std, 6),
                                       "accuracies": [[round(v, 6) for v in row]
                                                      for row in r.accuracies.tolist()]}
                            for r in self.reports}}
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "comparison.csv", out / "comparison.json"]
        paths[0].write_text(self.table())
        paths[1].write_text(self.to_json())
        for r in self.reports:
            paths.extend(r.write(out))
        return paths


def _fmt(v):
    return "" if v is None else f"{v:g}"


def _write_provenance_comment(buf, prov):
    buf.write("# provenance " + json.dumps(prov, sort_keys=True, separators=(",", ":")) + "\n")


# ------------------------------------------------------------- entry points


def _as_prepared(dataset, cfg) -> PreparedData:
    if isinstance(dataset, PreparedData):
        return dataset
    if not dataset.has_both_classes:
        from .errors import EmptyClass

        raise EmptyClass("cross-validation needs trials of both classes")
    return prepare(dataset, cfg)


def run_crossval(dataset: TrialSet | PreparedData, cfg: PipelineConfig,
                 method: str | None = None, workers: int | None = None) -> CvReport:
    method = method or cfg.method
    if method not in METHODS:
        raise InvalidConfig(f"unknown method {method!r}")
    data = _as_prepared(dataset, cfg)
    plan = fold_plan(data.labels, cfg)
    workers = worker_count() if workers is None else workers
    results = _run_folds(data, plan, (method,), cfg, workers)
    return CvReport(method, tuple(results), provenance(cfg), cfg.repeats, cfg.outer_folds)


def run_method_comparison(dataset: TrialSet | PreparedData, cfg: PipelineConfig,
                          methods=None, workers: int | None = None) -> ComparisonReport:
    """All methods on one shared fold plan, so per-fold differences are paired."""
    methods = tuple(methods or cfg.methods)
    data = _as_prepared(dataset, cfg)
    plan = fold_plan(data.labels, cfg)
    workers = worker_count() if workers is None else workers
    results = _run_folds(data, plan, methods, cfg, workers)
    prov = provenance(cfg)
    reports = tuple(
        CvReport(m, tuple(fr for fr in results if fr.method == m), prov, cfg.repeats, cfg.outer_folds)
        for m in methods
    )
    return ComparisonReport(reports, prov)


def r_square(feature, labels) -> float:
    """Squared point-biserial correlation between a feature and binary labels."""
    x = np.asarray(feature, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise InvalidConfig(f"{x.size} feature values for {y.size} labels")
    if len(np.unique(y)) != 2:
        raise InvalidConfig("r-square needs exactly two label values")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    if sxx <= 1e-300 * max(1.0, float(x @ x)) or np.ptp(x) == 0:
        raise ZeroVariance("feature has zero variance")
    r = float(xc @ yc) / math.sqrt(sxx * float(yc @ yc))
    return min(1.0, r * r)


_TABLE_NAMES = {"csp-only": "CSP", "sfbcsp": "SFBCSP", "mtl": "MTL", "srmtl": "srMTL"}


def subject_table(results: dict) -> str:
    """Per-subject accuracy (%) rows plus an ``Average`` row of mean +- std over subjects.

    ``results`` maps subject name to a :class:`ComparisonReport`; the best
    method of each row is starred.
    """
    if not results:
        raise InvalidConfig("no subjects to tabulate")
    methods = next(iter(results.values())).methods
    lines = ["Subject\t" + "\t".join(_TABLE_NAMES.get(m, m) for m in methods)]
    table = []
    for subject, rep in results.items():
        accs = [100.0 * rep[m].mean for m in methods]
        table.append(accs)
        best = max(accs)
        cells = [f"{a:.1f}" + ("*" if a == best else "") for a in accs]
        lines.append(f"{subject}\t" + "\t".join(cells))
    arr = np.asarray(table)
    sd = arr.std(axis=0, ddof=1) if len(arr) > 1 else np.zeros(arr.shape[1])
    lines.append("Average\t" + "\t".join(f"{m:.1f}+-{s:.1f}" for m, s in zip(arr.mean(axis=0), sd)))
    return "\n".join(lines) + "\n"
