"""Command-line interface.

Subcommands: run (execute a strategy x seed grid from a JSON config),
synth (write a synthetic dataset as CSVs + manifest), report (AULC table),
curves (mean learning-curve CSVs + SVG plots). Exit codes: 0 success,
1 runtime failure, 2 invalid input, 3 refusal to overwrite.
"""

import argparse
import json
import os
import sys
from pathlib import Path

from .data import (
    DatasetManifest,
    DomainSpec,
    SyntheticSpec,
    generate_synthetic,
    save_domain_csv,
    save_manifest,
)
from .engine import ExperimentConfig, run_grid
from .errors import OverwriteRefusedError, ValidationError
from .reporting import (
    aulc_table,
    format_curves_csv,
    format_table_csv,
    format_table_text,
    mean_curves,
    render_curves_svg,
    scan_runs,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INVALID = 2
EXIT_REFUSED = 3


def _load_json(path):
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from exc


def _seed_fallback(seeds_arg, config_seeds):
    if seeds_arg:
        return [int(s) for s in seeds_arg.split(",") if s.strip()]
    if config_seeds:
        return [int(s) for s in config_seeds]
    env = os.environ.get("MDALBENCH_SEED")
    if env is not None:
        return [int(env)]
    return []


def cmd_run(args):
    raw = _load_json(args.config)
    if args.seeds or not raw.get("seeds"):
        raw = dict(raw)
        seeds = _seed_fallback(args.seeds, raw.get("seeds"))
        if not seeds:
            raise ValidationError(
                "no seeds: provide config 'seeds', --seeds, or MDALBENCH_SEED"
            )
        raw["seeds"] = seeds
    if args.strategies:
        wanted = [s.strip() for s in args.strategies.split(",") if s.strip()]
        raw = dict(raw)
        raw["strategies"] = wanted
    config = ExperimentConfig.from_dict(raw)

    outcomes = run_grid(config, args.out, jobs=args.jobs, force=args.force)
    failures = [o for o in outcomes if o[2] != "ok"]
    for strategy, seed, status, error in outcomes:
        line = f"{config.name} {strategy} seed={seed}: {status}"
        if error:
            line += f" ({error})"
        print(line)
    if failures:
        print(f"{len(failures)}/{len(outcomes)} runs failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_synth(args):
    raw = _load_json(args.spec)
    try:
        spec = SyntheticSpec(**{k: v for k, v in raw.items() if k != "name"})
    except TypeError as exc:
        raise ValidationError(f"invalid synthetic spec: {exc}") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    datasets = generate_synthetic(spec)
    domains = []
    for dom in datasets:
        fname = f"{dom.name}.csv"
        save_domain_csv(dom, out / fname)
        domains.append(DomainSpec(name=dom.name, file=fname, classes=spec.num_classes))
    manifest = DatasetManifest(
        name=raw.get("name", "synthetic"), dim=spec.input_dim, domains=domains
    )
    save_manifest(manifest, out / "manifest.json")
    print(f"wrote {len(domains)} domain CSV(s) + manifest.json under {out}")
    return EXIT_OK


def cmd_report(args):
    runs = scan_runs(args.results_dir)
    datasets, strategies, cells, timing = aulc_table(runs)
    csv_text = format_table_csv(datasets, strategies, cells, timing)
    txt_text = format_table_text(datasets, strategies, cells, timing)
    out_dir = Path(args.results_dir)
    (out_dir / "aulc_table.csv").write_text(csv_text, encoding="utf-8")
    (out_dir / "aulc_table.txt").write_text(txt_text, encoding="utf-8")
    print(csv_text if args.format == "csv" else txt_text, end="")
    return EXIT_OK


def cmd_curves(args):
    runs = scan_runs(args.results_dir)
    curves = mean_curves(runs)
    out_dir = Path(args.results_dir)
    datasets = sorted({d for d, _ in curves})
    for dataset in datasets:
        csv_text = format_curves_csv(curves, dataset)
        (out_dir / f"curves_{dataset}.csv").write_text(csv_text, encoding="utf-8")
        svg_text = render_curves_svg(curves, dataset)
        (out_dir / f"curves_{dataset}.svg").write_text(svg_text, encoding="utf-8")
        print(f"wrote curves_{dataset}.csv and curves_{dataset}.svg")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mdalbench",
        description="Multi-domain active learning benchmark runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a strategy x seed experiment grid")
    run_p.add_argument("--config", required=True, help="experiment config JSON")
    run_p.add_argument("--out", required=True, help="output directory for results")
    run_p.add_argument("--seeds", help="comma-separated seed overrides")
    run_p.add_argument("--strategies", help="comma-separated strategy filter")
    run_p.add_argument("--jobs", type=int, default=1, help="parallel worker cap")
    run_p.add_argument(
        "--force", action="store_true", help="overwrite existing result files"
    )
    run_p.set_defaults(fn=cmd_run)

    synth_p = sub.add_parser("synth", help="generate a synthetic dataset")
    synth_p.add_argument("--spec", required=True, help="synthetic spec JSON")
    synth_p.add_argument("--out", required=True, help="output directory")
    synth_p.set_defaults(fn=cmd_synth)

    report_p = sub.add_parser("report", help="AULC summary table from results")
    report_p.add_argument("results_dir", help="directory with run CSV/JSON files")
    report_p.add_argument(
        "--format", choices=("csv", "text"), default="text", help="stdout format"
    )
    report_p.set_defaults(fn=cmd_report)

    curves_p = sub.add_parser("curves", help="mean learning curves + SVG plots")
    curves_p.add_argument("results_dir", help="directory with run CSV/JSON files")
    curves_p.set_defaults(fn=cmd_curves)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OverwriteRefusedError as exc:
        print(f"refusing to overwrite: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
