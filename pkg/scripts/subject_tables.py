#!/usr/bin/env python3
"""Per-subject accuracy table for recorded data in the manifest format.

    python scripts/subject_tables.py --config protocol_5x5.toml \
        data/B01/manifest.json data/B02/manifest.json ...

Each manifest is one subject (named after its directory). The table lists
accuracy in percent per method, stars the best method per subject, and ends
with an Average row of mean +- std over subjects.
"""
import argparse
from pathlib import Path

from srmtl.cli import _config_path
from srmtl.dataio import load_dataset
from srmtl.pipeline import PipelineConfig, run_method_comparison, subject_table


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("manifests", nargs="+", type=Path)
    ap.add_argument("--config", default="protocol_5x5.toml")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--workers", type=int)
    ap.add_argument("--out", default="results/subjects")
    args = ap.parse_args()

    cfg = PipelineConfig.from_toml(_config_path(args.config))
    if args.seed is not None:
        cfg = PipelineConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    out = Path(args.out)
    results = {}
    for m in args.manifests:
        name = m.parent.name if m.name == "manifest.json" else m.stem
        rep = run_method_comparison(load_dataset(m), cfg, workers=args.workers)
        rep.write(out / name)
        results[name] = rep
        print(f"{name}: " + ", ".join(f"{k} {100 * rep[k].mean:.1f}" for k in rep.methods))
    table = subject_table(results)
    out.mkdir(parents=True, exist_ok=True)
    (out / "subjects.tsv").write_text(table)
    print(table)


if __name__ == "__main__":
    main()
