"""Command line entry point: ``csirobust <command> [options]``.

Exit codes: 0 success, 1 config error, 2 runtime failure (including runs
where some grid cell failed; the report is still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from ..data.csib import write_csib
from ..data.synth import ChannelParams, synth_generate
from .config import ConfigError, parse_config, parse_config_text
from .report import (emit_report, format_summary, read_report, summarize, summary_to_csv)
from .runner import _CHANNEL_KEYS, run_experiment, stage_seed

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
COMMANDS = {
    "gen-data": "write the synthetic dataset of a seed as a CSIB file",
    "train": "train every model (clean) and checkpoint it",
    "defend": "train models plus their adversarially trained variants",
    "eval": "clean accuracy / macro-F1 / capacity of trained (and defended) models",
    "attack": "run the attack grid (reusing checkpoints)",
    "run": "full grid: data, training, defenses, attacks, report and summary",
    "report": "aggregate an existing report into mean +- SD rows",
}
_STAGES = {"train": ("train",), "defend": ("train", "defend"), "eval": ("train", "defend"),
           "attack": ("train", "defend", "attack"), "run": ("train", "defend", "attack")}


def default_config_text(name="default.cfg"):
    return resources.files("csirobust.bench").joinpath("configs", name).read_text()


def load_config(path):
    if path is None:
        return parse_config_text(default_config_text(), "<default.cfg>")
    return parse_config(path)


def build_parser():
    parser = argparse.ArgumentParser(prog="csirobust", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="experiment config (default: bundled suite)")
        p.add_argument("--seed", type=int, help="run a single seed instead of the config list")
        p.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        p.add_argument("--format", choices=("csv", "json"), help="report format")
        p.add_argument("--jobs", type=int, help="worker processes (one seed per job)")
        p.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    return parser


def _report_path(out, fmt):
    return Path(out) / f"report.{fmt}"


def _write_outputs(cfg, records, timings, out, fmt):
    path = emit_report(records, _report_path(out, fmt), fmt, cfg)
    rows = summarize(records)
    (Path(out) / "summary.csv").write_text(summary_to_csv(rows))
    # wall-clock numbers live outside the deterministic report
    (Path(out) / "timings.json").write_text(json.dumps(timings, indent=1, sort_keys=True))
    return path, rows


def cmd_gen_data(cfg, args, out):
    ds = cfg.dataset
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    params = ChannelParams(**{k: ds[k] for k in _CHANNEL_KEYS})
    data = synth_generate(params, ds["n_classes"], ds["n_per_class"], tuple(ds["dims"]),
                          seed=stage_seed(seed, "data"))
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{ds['name']}-seed{seed}.csib"
    write_csib(data, path)
    print(f"wrote {len(data)} samples {data.dims} to {path}")
    return EXIT_OK


def cmd_report(cfg, args, out):
    fmt = args.format or cfg.run["format"]
    records = read_report(_report_path(out, fmt))
    rows = summarize(records)
    (out / "summary.csv").write_text(summary_to_csv(rows))
    print(format_summary(rows))
    return EXIT_OK


def cmd_grid(cfg, args, out):
    fmt = args.format or cfg.run["format"]
    seeds = [args.seed] if args.seed is not None else None
    records, timings = run_experiment(cfg, out, jobs=args.jobs, seeds=seeds,
                                      stages=_STAGES[args.command])
    path, rows = _write_outputs(cfg, records, timings, out, fmt)
    print(format_summary(rows))
    failed = [r for r in records if r.status != "ok"]
    print(f"{len(records)} records ({len(failed)} failed) -> {path}")
    return EXIT_RUNTIME if failed else EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        if args.jobs is not None and args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cfg.run["output_dir"])
    handler = {"gen-data": cmd_gen_data, "report": cmd_report}.get(args.command, cmd_grid)
    try:
        return handler(cfg, args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported through the exit code
        logging.getLogger(__name__).debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
