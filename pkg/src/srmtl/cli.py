"""Command-line entry point: ``srmtl <subcommand> ...``.

Exit status is 0 on success, 1 for invalid input or usage, 2 for numerical
failure. Every file written carries a provenance block.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InvalidConfig, MissingFile, NumericalError, SchemaViolation, ValidationError

__all__ = ["main", "build_parser"]


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ helpers


def _bundled(name: str) -> Path | None:
    ref = resources.files("srmtl") / "fixtures" / name
    return Path(str(ref)) if ref.is_file() else None


def _config_path(arg) -> Path:
    p = Path(arg)
    if p.is_file():
        return p
    fallback = _bundled(p.name)
    if fallback is not None:
        return fallback
    raise MissingFile(f"config file {arg} not found (and no bundled fixture of that name)")


def _load_config(args):
    from .pipeline import PipelineConfig

    if getattr(args, "config", None):
        return PipelineConfig.from_toml(_config_path(args.config))
    return PipelineConfig()


def _manifest(arg) -> Path:
    p = Path(arg)
    return p / "manifest.json" if p.is_dir() else p


def _dataset(args, cfg):
    from .dataio import load_dataset, synth_dataset

    if getattr(args, "data", None):
        return load_dataset(_manifest(args.data))
    if cfg.manifest:
        return load_dataset(_manifest(cfg.manifest))
    if cfg.synth is not None:
        return synth_dataset(cfg.synth)
    raise InvalidConfig("no data: pass --data or give the config a manifest or [synth] section")


def _band_spec(args):
    from .signal import DEFAULT_BANDS, parse_band_sweep, read_band_list

    if getattr(args, "band_list", None):
        return read_band_list(args.band_list)
    if getattr(args, "bands", None):
        return parse_band_sweep(args.bands)
    return DEFAULT_BANDS


def _prov(cfg=None, seed=None, extra=None):
    from .pipeline import provenance

    p = provenance(cfg, seed)
    if extra:
        p["arguments"] = extra
    return p


def _prov_line(prov) -> str:
    return "# provenance " + json.dumps(prov, sort_keys=True, separators=(",", ":")) + "\n"


def _args_dict(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def _read_csv(path):
    """Read a CSV written by this tool: provenance comments, then a header row."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"{path} not found")
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise SchemaViolation(f"{path} has no header")
    return rows[0], rows[1:]


def _read_features(path):
    header, rows = _read_csv(path)
    if not header or header[0] != "label":
        raise SchemaViolation(f"{path}: first column must be 'label'")
    try:
        arr = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise SchemaViolation(f"{path}: non-numeric entry ({exc})") from exc
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise SchemaViolation(f"{path}: no feature rows")
    return header[1:], arr[:, 0].astype(int), arr[:, 1:]


def _write_features(path, names, labels, F, prov):
    buf = io.StringIO()
    buf.write(_prov_line(prov))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", *names])
    for lab, row in zip(labels, F):
        w.writerow([int(lab), *(repr(float(v)) for v in row)])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(buf.getvalue())


def _read_partition(path):
    from .subclass import SubclassPartition

    header, rows = _read_csv(path)
    if header != ["trial_index", "class", "cluster_id", "is_exemplar"]:
        raise SchemaViolation(f"{path}: unexpected partition header {header}")
    rows = sorted(rows, key=lambda r: int(r[0]))
    assignment = np.array([int(r[2]) for r in rows])
    classes = np.array([int(r[1]) for r in rows])
    K = int(assignment.max()) + 1
    exemplars = [0] * K
    owner = [0] * K
    for i, r in enumerate(rows):
        k = int(r[2])
        owner[k] = int(r[1])
        if int(r[3]):
            exemplars[k] = i
    return SubclassPartition(assignment, tuple(exemplars), tuple(owner)), classes


# --------------------------------------------------------------- subcommands


def cmd_synth(args):
    from .dataio import SynthConfig, save_dataset, synth_dataset
    from .pipeline import tomllib

    path = _config_path(args.config)
    with path.open("rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise InvalidConfig(f"{path}: {exc}") from exc
    cfg = SynthConfig.from_dict(raw.get("synth", raw))
    if args.seed is not None:
        cfg = SynthConfig.from_dict({**cfg.__dict__, "seed": args.seed})
    ts = synth_dataset(cfg)
    prov = _prov(None, cfg.seed, _args_dict(args))
    prov["synth"] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.__dict__.items()}
    out = save_dataset(ts, args.out, name=f"synth-seed{cfg.seed}", extra={"provenance": prov})
    print(f"wrote {len(ts)} trials to {out}")


def cmd_filter(args):
    from .dataio import TrialSet, load_dataset, save_dataset
    from .signal import design_filter_bank, filter_trialset

    ts = load_dataset(_manifest(args.data))
    bank = design_filter_bank(_band_spec(args), ts.fs, args.order)
    filtered = filter_trialset(ts, bank)
    prov = _prov(None, None, _args_dict(args))
    out = Path(args.out)
    index = []
    for g, (lo, hi) in enumerate(bank.bands):
        sub = TrialSet.from_arrays(filtered[g].astype(np.float32), ts.labels, ts.fs, ts.channel_names)
        d = out / f"band_{g:02d}"
        save_dataset(sub, d, name=f"{lo:g}-{hi:g}Hz",
                     extra={"provenance": prov, "band_hz": [lo, hi]})
        index.append({"band_hz": [lo, hi], "dir": d.name,
                      "b": bank.b[g].tolist(), "a": bank.a[g].tolist()})
    (out / "filter_bank.json").write_text(json.dumps(
        {"provenance": prov, "order": bank.order, "fs_hz": bank.fs, "bands": index}, indent=2))
    print(f"wrote {len(bank)} filtered bands to {out}")


def cmd_features(args):
    from .csp import build_feature_matrix
    from .dataio import load_dataset
    from .signal import design_filter_bank

    train = load_dataset(_manifest(args.train))
    bank = design_filter_bank(_band_spec(args), train.fs, args.order)
    fm, filters = build_feature_matrix(train, bank, args.m, shrinkage=args.shrinkage,
                                       trace_normalize=args.trace_normalize)
    prov = _prov(None, None, _args_dict(args))
    _write_features(args.out, fm.column_names, train.labels, fm.values, prov)
    if args.filters_out:
        Path(args.filters_out).write_text(json.dumps({
            "provenance": prov,
            "bands": [list(U.band) for U in filters],
            "filters": [U.filters.tolist() for U in filters],
            "eigenvalues": [U.eigenvalues.tolist() for U in filters],
        }, indent=2))
    if args.test:
        if not args.test_out:
            raise InvalidConfig("--test needs --test-out")
        test = load_dataset(_manifest(args.test))
        tm, _ = build_feature_matrix(test, bank, args.m, filters_per_band=filters)
        labels = [t.label if t.label is not None else 0 for t in test]
        _write_features(args.test_out, tm.column_names, labels, tm.values, prov)
    print(f"wrote {fm.values.shape[0]} x {fm.values.shape[1]} features to {args.out}")


def cmd_cluster(args):
    from .subclass import ApConfig, discover_subclasses

    try:
        pref = float(args.preference)
    except ValueError:
        pref = args.preference
    cfg = ApConfig(damping=args.damping, max_iters=args.max_iters,
                   convergence_window=args.window, preference=pref, standardize=args.standardize)
    _, labels, F = _read_features(args.features)
    part = discover_subclasses(F, labels, cfg)
    ex = set(part.exemplars)
    buf = io.StringIO()
    prov = _prov(None, None, _args_dict(args))
    prov["ap_status"] = {str(k): v for k, v in part.status.items()}
    buf.write(_prov_line(prov))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trial_index", "class", "cluster_id", "is_exemplar"])
    for i, (c, k) in enumerate(zip(labels, part.assignment)):
        w.writerow([i, int(c), int(k), int(i in ex)])
    Path(args.out).write_text(buf.getvalue())
    print(f"K = {part.K} clusters ({list(part.class_of_cluster)}), status {part.status}")


def cmd_train(args):
    from .classify import train_svm
    from .errors import NoConvergence
    from .mtl import SrmtlProblem, fallback_features, select_features, solve_srmtl
    from .subclass import ApConfig, build_laplacian, build_similarity, discover_subclasses, encode_labels
    from .errors import EmptySelection

    names, labels, F = _read_features(args.features)
    mean, sd = F.mean(axis=0), F.std(axis=0)
    sd[sd == 0] = 1.0
    Z = (F - mean) / sd
    if args.method == "sfbcsp":
        Y, L = np.where(labels == 1, 1.0, -1.0)[:, None], None
    else:
        if args.partition:
            part, classes = _read_partition(args.partition)
            if not np.array_equal(classes, labels):
                raise SchemaViolation("partition classes disagree with feature labels")
        else:
            part = discover_subclasses(F, labels, ApConfig())
        Y = encode_labels(part)
        L = build_laplacian(build_similarity(part)) if args.method == "srmtl" else None
    lam2 = args.lambda2 if args.method == "srmtl" else 0.0
    W, state = solve_srmtl(SrmtlProblem(Z, Y, L, args.lambda1, lam2), T=args.max_iters, tol=args.tol)
    try:
        idx, fallback = select_features(W), False
    except EmptySelection:
        idx, fallback = fallback_features(W), True
    try:
        model = train_svm(F[:, idx], labels, args.C, feature_indices=idx, seed=args.seed)
    except NoConvergence as exc:
        model = exc.model
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prov = _prov(None, args.seed, _args_dict(args))
    buf = io.StringIO()
    buf.write(_prov_line(prov))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "objective", "normalized_error", "mu"])
    w.writerow([0, repr(state.objective[0]), "", ""])
    for t, obj, err, mu in state.trace_rows():
        w.writerow([t, repr(obj), repr(err), repr(mu)])
    (out / "trace.csv").write_text(buf.getvalue())
    buf = io.StringIO()
    buf.write(_prov_line(prov))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["feature", *(f"task_{k}" for k in range(W.shape[1]))])
    for name, row in zip(names, W):
        w.writerow([name, *(repr(float(v)) for v in row)])
    (out / "weights.csv").write_text(buf.getvalue())
    body = json.loads(model.to_json())
    body.update(provenance=prov, selected_names=[names[i] for i in idx], fallback=fallback,
                iterations=state.iteration, converged=state.converged,
                zscore={"means": mean.tolist(), "scales": sd.tolist()})
    (out / "model.json").write_text(json.dumps(body, indent=2))
    print(f"{state.iteration} iterations (converged={state.converged}), "
          f"{len(idx)} features selected{' (fallback)' if fallback else ''}")


def _apply_overrides(cfg, args):
    from dataclasses import replace

    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "repeats", None) is not None:
        over["repeats"] = args.repeats
    if getattr(args, "method", None):
        over["method"] = args.method
    return replace(cfg, **over) if over else cfg


def cmd_crossval(args):
    from .pipeline import run_crossval

    cfg = _apply_overrides(_load_config(args), args)
    report = run_crossval(_dataset(args, cfg), cfg, workers=args.workers)
    if args.out:
        report.write(args.out)
    print(f"{report.method}: {100 * report.mean:.1f} +- {100 * report.std:.1f} % "
          f"over {len(report.folds)} folds")


def cmd_compare(args):
    from .pipeline import run_method_comparison

    cfg = _apply_overrides(_load_config(args), args)
    methods = tuple(args.methods.split(",")) if args.methods else None
    rep = run_method_comparison(_dataset(args, cfg), cfg, methods=methods, workers=args.workers)
    if args.out:
        rep.write(args.out)
    sys.stdout.write(rep.table())


def cmd_rsq(args):
    from .pipeline import r_square
    from .errors import ZeroVariance

    names, labels, F = _read_features(args.features)
    y = np.where(labels == 1, 1.0, -1.0)
    buf = io.StringIO()
    buf.write(_prov_line(_prov(None, None, _args_dict(args))))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["feature", "r_square"])
    for d, name in enumerate(names):
        try:
            v = repr(r_square(F[:, d], y))
        except ZeroVariance:
            v = "nan"
        w.writerow([name, v])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


# ------------------------------------------------------------------- parser


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _add_bands(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--bands", help="swept bands lo:hi:width:step (default 4:40:4:2)")
    g.add_argument("--band-list", help="file with one 'lo,hi' pair per line")
    p.add_argument("--order", type=_positive_int, default=4, help="Butterworth prototype order")


def build_parser() -> argparse.ArgumentParser:
    from .pipeline import METHODS

    p = _Parser(prog="srmtl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a planted-subclass synthetic dataset")
    s.add_argument("--config", required=True, help="TOML with synthetic generator settings")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, help="override the generator seed")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("filter", help="bandpass a dataset through the filter bank")
    s.add_argument("--data", required=True, help="manifest file or dataset directory")
    _add_bands(s)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("features", help="fit CSP per band and write log-variance features")
    s.add_argument("--train", required=True, help="training manifest or dataset directory")
    s.add_argument("--m", type=_positive_int, default=2, help="filter pairs per band")
    _add_bands(s)
    s.add_argument("--shrinkage", type=float, default=1e-6)
    s.add_argument("--trace-normalize", action="store_true")
    s.add_argument("--out", required=True, help="feature CSV")
    s.add_argument("--filters-out", help="write the fitted spatial filters as JSON")
    s.add_argument("--test", help="apply the training filters to this dataset too")
    s.add_argument("--test-out", help="feature CSV for --test")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("cluster", help="affinity-propagation subclasses per class")
    s.add_argument("--features", required=True)
    s.add_argument("--damping", type=float, default=0.7)
    s.add_argument("--preference", default="median", help="'median' or a number")
    s.add_argument("--max-iters", type=_positive_int, default=500)
    s.add_argument("--window", type=_positive_int, default=50, help="convergence window")
    s.add_argument("--standardize", action="store_true", help="z-score features before clustering")
    s.add_argument("--out", required=True, help="partition CSV")
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("train", help="solve one regression, select features, fit the SVM")
    s.add_argument("--features", required=True)
    s.add_argument("--partition", help="partition CSV from 'cluster' (computed if absent)")
    s.add_argument("--method", choices=("sfbcsp", "mtl", "srmtl"), default="srmtl")
    s.add_argument("--lambda1", type=float, required=True)
    s.add_argument("--lambda2", type=float, default=0.0)
    s.add_argument("--max-iters", type=_positive_int, default=200)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--C", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory (trace, weights, model)")
    s.set_defaults(func=cmd_train)

    for name, func, help_ in (("crossval", cmd_crossval, "nested cross-validation of one method"),
                              ("compare", cmd_compare, "all methods on shared folds")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="pipeline TOML (bundled fixtures are found by name)")
        s.add_argument("--data", help="manifest or dataset directory (overrides the config)")
        s.add_argument("--seed", type=int)
        s.add_argument("--repeats", type=_positive_int)
        s.add_argument("--workers", type=_positive_int, help="fold-level worker processes")
        s.add_argument("--out", help="report directory")
        if name == "crossval":
            s.add_argument("--method", choices=METHODS)
        else:
            s.add_argument("--methods", help="comma-separated subset of " + ",".join(METHODS))
        s.set_defaults(func=func)

    s = sub.add_parser("rsq", help="r-square discriminability of every feature column")
    s.add_argument("--features", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_rsq)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except SystemExit as exc:  # --help and friends
        return int(exc.code or 0)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main_exit():  # console-script wrapper
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_exit()
