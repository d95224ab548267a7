"""Command line entry point.

Four subcommands cover the workbench lifecycle:

    generate   build the synthetic datasets for both scene profiles
    run        execute evaluation cases and write report JSON/CSV
    report     summarize report files side by side, export distributions
    import     convert externally captured frames into a dataset

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
Mutating commands take a lock file in the output directory; concurrent
runs against the same directory are refused rather than interleaved.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import pipeline
from . import protocol as proto
from .config import WorkbenchConfig, default_config, load_config
from .errors import ConfigError, UsageError, WorkbenchError


def _load_cfg(args) -> WorkbenchConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if getattr(args, "out", None):
        cfg = WorkbenchConfig.from_dict({**cfg.to_dict(), "out_dir": args.out})
    return cfg


def _parse_int_list(text: str, what: str) -> list[int]:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            out.append(int(tok))
        except ValueError:
            raise UsageError(f"bad {what} token {tok!r}") from None
    if not out:
        raise UsageError(f"empty {what} list")
    return out


def cmd_generate(args) -> int:
    cfg = _load_cfg(args)
    profiles = (args.profile,) if args.profile else ("U", "I")
    with pipeline.output_lock(cfg.out_dir):
        datasets = pipeline.generate_datasets(cfg, cfg.out_dir, profiles=profiles)
    for pid in profiles:
        ds = datasets[pid]
        print(f"profile {pid}: {len(ds.users)} users, {ds.n_samples()} samples "
              f"-> {pipeline.dataset_dir(cfg.out_dir, pid)}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    case_ids = (_parse_int_list(args.cases, "case") if args.cases
                else sorted(proto.CASES))
    for cid in case_ids:
        if cid not in proto.CASES:
            raise UsageError(f"unknown case {cid}; valid cases are "
                             f"{sorted(proto.CASES)}")
    seeds = (_parse_int_list(args.seeds, "seed") if args.seeds
             else list(cfg.seeds))
    cohorts = {spec.cohort for c in case_ids for spec in [proto.case_spec(c)]}
    with pipeline.output_lock(cfg.out_dir):
        datasets = pipeline.load_datasets(cfg.out_dir, profiles=sorted(cohorts))
        summary = pipeline.run_cases(case_ids, seeds, datasets, cfg,
                                     out_dir=cfg.out_dir)
    for seed in seeds:
        for cid in case_ids:
            st = summary.per_case[cid][seed]
            jpath, _ = pipeline.report_paths(cfg.out_dir, cid, seed)
            print(f"case {cid} seed {seed}: n={st.n} mean={st.mean:.2f} "
                  f"std={st.std:.2f} median={st.median:.2f} -> {jpath}")
        flags = summary.flags_by_seed()[seed]
        if flags:
            parts = ", ".join(f"{k}={v:.3f}" if isinstance(v, float)
                              else f"{k}={v}" for k, v in sorted(flags.items()))
            print(f"seed {seed} flags: {parts}")
    return 0


def _dist_csv_paths(out_dir, report) -> tuple[str, str]:
    base = os.path.join(os.fspath(out_dir), "dist")
    stem = f"case{report.case_id}_seed{report.seed}"
    return (os.path.join(base, f"{stem}_percentiles.csv"),
            os.path.join(base, f"{stem}_hist.csv"))


def cmd_report(args) -> int:
    cfg = _load_cfg(args)
    reports = [proto.CaseReport.from_dict(proto.read_report_json(p))
               for p in args.reports]
    comparison = proto.compare_reports(reports)
    print(f"{'case':<6}{'n':>6}{'mean':>8}{'std':>8}{'median':>8}")
    for cid, st in comparison["cases"].items():
        print(f"{cid:<6}{st['n']:>6}{st['mean']:>8.2f}{st['std']:>8.2f}"
              f"{st['median']:>8.2f}")
    for key, val in comparison["flags"].items():
        print(f"{key}: {val:.3f}" if isinstance(val, float) else f"{key}: {val}")
    for rep in reports:
        dist = proto.distribution_export([p.error_deg
                                          for p in rep.all_predictions()])
        ppath, hpath = _dist_csv_paths(cfg.out_dir, rep)
        os.makedirs(os.path.dirname(ppath), exist_ok=True)
        with open(ppath, "w", encoding="utf-8", newline="") as fh:
            fh.write("percentile,error_deg\n")
            for q, v in enumerate(dist["percentiles"]):
                fh.write(f"{q},{v!r}\n")
        with open(hpath, "w", encoding="utf-8", newline="") as fh:
            fh.write("bin_lo_deg,bin_hi_deg,count\n")
            edges = dist["bin_edges_deg"]
            for k, c in enumerate(dist["bin_counts"]):
                fh.write(f"{edges[k]!r},{edges[k + 1]!r},{c}\n")
        print(f"case {rep.case_id} distributions -> {ppath}, {hpath}")
    return 0


def cmd_import(args) -> int:
    cfg = _load_cfg(args)
    with pipeline.output_lock(cfg.out_dir):
        result = pipeline.import_dataset(args.annotations, cfg.out_dir)
    print(f"imported {result.n_imported} samples -> {result.dataset_dir}")
    if result.n_imported == 0 and not result.failures:
        print("warning: annotation file lists no samples", file=sys.stderr)
    for index, reason in result.failures:
        print(f"record {index}: {reason}", file=sys.stderr)
    if result.failures:
        print(f"{len(result.failures)} record(s) failed", file=sys.stderr)
        if args.strict:
            return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gazebench",
        description="Synthetic gaze estimation workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate synthetic datasets")
    p.add_argument("--config", help="config JSON path (defaults built in)")
    p.add_argument("--profile", choices=("U", "I"),
                   help="generate only this profile")
    p.add_argument("--out", help="output directory (overrides config)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="run evaluation cases")
    p.add_argument("--config", help="config JSON path")
    p.add_argument("--cases", help="comma-separated case ids (default: all)")
    p.add_argument("--seeds", help="comma-separated seeds (default: config)")
    p.add_argument("--out", help="output directory (overrides config)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="summarize report files")
    p.add_argument("reports", nargs="+", help="report JSON paths")
    p.add_argument("--config", help="config JSON path")
    p.add_argument("--out", help="output directory for distribution CSVs")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("import", help="import externally captured frames")
    p.add_argument("annotations", help="annotation JSON path")
    p.add_argument("--config", help="config JSON path")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--strict", action="store_true",
                   help="nonzero exit if any record fails")
    p.set_defaults(func=cmd_import)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except WorkbenchError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
