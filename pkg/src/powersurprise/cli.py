"""Command-line front end.

Commands: ``analyze`` (run the pipeline from a YAML config and write the
artifact set), ``generate`` (synthesize a labeled stream), ``trace-export``
(re-emit a stored trace), and ``version``.

Exit codes: 0 success, 1 config/usage error, 2 I/O error, 3 numeric
failure, 4 insufficient data. Every artifact embeds the full config and
seed so reruns are byte-comparable; writes are atomic
(write-temp-then-rename). Environment variables are never consulted.
"""

import argparse
import json
import os
import sys

import numpy as np
import yaml

from . import __version__, cutoff, dpgmm, surprise, synth
from .blockfilter import FilterParams
from .errors import (
    ConfigError, DataFormatError, InsufficientDataError, NumericError)
from .ingest import IngestConfig, load_series

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_NUMERIC = 3
EXIT_DATA = 4


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so exit codes stay ours."""

    def error(self, message):
        raise _UsageError(message)


# ---------------------------------------------------------------------------
# run config


REQUIRED_FIELDS = ("input", "seed")


def _section(data, name):
    sect = data.get(name, {})
    if sect is None:
        sect = {}
    if not isinstance(sect, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return sect


def _take(section, allowed, where):
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {where} fields: {sorted(unknown)}")
    return {k: section[k] for k in allowed if k in section}


def load_run_config(path):
    """Parse and validate an analyze config file (YAML)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise DataFormatError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a YAML mapping")

    for fieldname in REQUIRED_FIELDS:
        if fieldname not in data:
            raise ConfigError(f"config is missing required field {fieldname!r}")
    cutoff_sect = _section(data, "cutoff")
    if "window_events" not in cutoff_sect:
        raise ConfigError("config is missing required field cutoff.window_events")

    ingest_kwargs = _take(
        _section(data, "ingest"), (
            "resample_period", "gap_fill", "max_gap", "negative_policy",
            "timestamp_column", "value_column", "delimiter", "header"),
        "ingest")
    filter_kwargs = _take(
        _section(data, "filter"), (
            "abs_threshold", "rel_threshold", "min_segment_len",
            "event_threshold"), "filter")
    mixture_kwargs = _take(
        _section(data, "dpgmm"), (
            "truncation", "alpha", "kappa", "nu", "scale_watts", "phi_mean",
            "tol", "max_iter", "n_init"), "dpgmm")
    cutoff_kwargs = _take(
        cutoff_sect, (
            "window_events", "patience", "thresh_postdictive",
            "thresh_transitional", "divergence", "grid_points", "smoothing",
            "relabel", "feature_dim"), "cutoff")

    top_known = {"input", "seed", "output_dir", "export_formats", "ingest",
                 "filter", "dpgmm", "cutoff"}
    unknown = set(data) - top_known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")

    formats = data.get("export_formats", ["csv"])
    if isinstance(formats, str):
        formats = [formats]
    bad = set(formats) - {"csv", "json"}
    if bad:
        raise ConfigError(f"unsupported export formats: {sorted(bad)}")

    cfg = cutoff.CutoffConfig(
        seed=int(data["seed"]),
        filter_params=FilterParams(**filter_kwargs),
        mixture=cutoff.DpgmmConfig(**mixture_kwargs),
        **cutoff_kwargs)
    return {
        "input": str(data["input"]),
        "seed": int(data["seed"]),
        "output_dir": str(data.get("output_dir", "powersurprise_out")),
        "export_formats": list(formats),
        "ingest": IngestConfig(**ingest_kwargs),
        "cutoff": cfg,
        "echo": data,
    }


# ---------------------------------------------------------------------------
# analyze


def _result_payload(result, run):
    cfg = run["cutoff"]
    return {
        "format_version": 1,
        "kind": "cutoff-result",
        "config": run["echo"],
        "seed": run["seed"],
        "found": result.found,
        "truncated_patience": result.truncated_patience,
        "cutoff_window": result.cutoff_window,
        "cutoff_event": result.cutoff_event,
        "cutoff_timestamp": (None if np.isnan(result.cutoff_timestamp)
                             else result.cutoff_timestamp),
        "thresholds": {
            "postdictive": cfg.thresh_postdictive,
            "transitional": cfg.thresh_transitional,
            "patience": cfg.patience,
        },
        "summary": result.summary,
        "trace_file": "trace.csv",
        "trace": surprise.trace_to_dict(result.trace),
    }


def _report_text(result, run):
    cfg = run["cutoff"]
    lines = [
        "powersurprise run report",
        "========================",
        f"input: {run['input']}",
        f"seed: {run['seed']}",
        f"window_events: {cfg.window_events}  patience: {cfg.patience}",
        f"thresholds: postdictive <= {cfg.thresh_postdictive}, "
        f"transitional <= {cfg.thresh_transitional}",
        f"divergence: {cfg.divergence}",
        "",
    ]
    for key, val in sorted(result.summary.items()):
        lines.append(f"{key}: {val}")
    lines.append("")
    if result.found:
        state = "truncated patience" if result.truncated_patience else "full patience"
        lines.append(
            f"cutoff found ({state}): window {result.cutoff_window}, "
            f"event {result.cutoff_event}, timestamp {result.cutoff_timestamp}")
    else:
        lines.append("no cutoff found: surprise never settled under the "
                     "joint threshold")
    if result.summary.get("all_zero_postdictive") or \
            result.summary.get("all_zero_transitional"):
        lines.append("warning: an all-zero surprise channel was normalized "
                     "to zeros")
    lines.append(f"config echo: {json.dumps(run['echo'], sort_keys=True)}")
    return "\n".join(lines) + "\n"


def cmd_analyze(args):
    run = load_run_config(args.config)
    series = load_series(run["input"], run["ingest"])
    result = cutoff.run_pipeline(series, run["cutoff"])

    outdir = args.output_dir or run["output_dir"]
    os.makedirs(outdir, exist_ok=True)
    header = (
        f"powersurprise trace v1",
        f"seed: {run['seed']}",
        f"config: {json.dumps(run['echo'], sort_keys=True)}",
    )
    if "csv" in run["export_formats"]:
        surprise.write_trace_csv(result.trace, os.path.join(outdir, "trace.csv"),
                                 header_lines=header)
    if "json" in run["export_formats"]:
        surprise.write_trace_json(
            result.trace, os.path.join(outdir, "trace.json"),
            meta={"seed": run["seed"], "config": run["echo"]})
    surprise.write_text_atomic(
        os.path.join(outdir, "result.json"),
        json.dumps(_result_payload(result, run), indent=1, sort_keys=True) + "\n")
    dpgmm.save_checkpoint(result.model, os.path.join(outdir, "model.json"))
    surprise.write_text_atomic(os.path.join(outdir, "report.txt"),
                               _report_text(result, run))
    print(f"wrote artifacts to {outdir}")
    if result.found:
        print(f"cutoff: window {result.cutoff_window} "
              f"(event {result.cutoff_event})")
    else:
        print("no cutoff found")
    return EXIT_OK


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args):
    try:
        with open(args.spec, "r", encoding="utf-8") as fh:
            payload = yaml.safe_load(fh)
    except OSError as exc:
        raise DataFormatError(f"cannot read spec {args.spec}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {args.spec}: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError("synthetic spec must be a YAML mapping")
    try:
        spec = synth.SyntheticSpec.from_dict(payload)
    except KeyError as exc:
        raise ConfigError(f"synthetic spec is missing field {exc}") from exc

    series, labels = synth.generate(spec, args.seed)
    head = [f"# powersurprise synthetic v1",
            f"# seed: {args.seed}",
            f"# spec: {json.dumps(payload, sort_keys=True)}"]
    rows = "\n".join(f"{repr(float(t))},{repr(float(v))}"
                     for t, v in zip(series.timestamps, series.values))
    surprise.write_text_atomic(args.out, "\n".join(head + [rows]) + "\n")
    label_rows = "\n".join(f"{repr(float(t))},{int(l)}"
                           for t, l in zip(series.timestamps, labels))
    surprise.write_text_atomic(args.labels, "\n".join(head + [label_rows]) + "\n")
    print(f"wrote {len(series)} samples to {args.out}; labels to {args.labels}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# trace-export


def cmd_trace_export(args):
    try:
        with open(args.result, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise DataFormatError(f"cannot read {args.result}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"corrupt result artifact: {exc}") from exc
    if payload.get("kind") != "cutoff-result" or "trace" not in payload:
        raise DataFormatError(f"{args.result} is not a cutoff result artifact")
    trace = surprise.trace_from_dict(payload["trace"])
    header = (
        "powersurprise trace v1",
        f"seed: {payload.get('seed')}",
        f"config: {json.dumps(payload.get('config'), sort_keys=True)}",
    )
    if args.format == "csv":
        surprise.write_trace_csv(trace, args.out, header_lines=header)
    else:
        surprise.write_trace_json(
            trace, args.out,
            meta={"seed": payload.get("seed"), "config": payload.get("config")})
    print(f"wrote {args.format} trace to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    parser = _Parser(
        prog="powersurprise",
        description="Bayesian-surprise tracking and training-cutoff "
                    "detection for power-meter event streams")
    sub = parser.add_subparsers(dest="command")

    p_an = sub.add_parser("analyze", help="run the pipeline from a config file")
    p_an.add_argument("--config", "-c", required=True,
                      help="YAML run configuration")
    p_an.add_argument("--output-dir", "-o", default=None,
                      help="override the config's output directory")

    p_gen = sub.add_parser("generate", help="synthesize a labeled stream")
    p_gen.add_argument("--spec", "-s", required=True,
                       help="YAML synthetic stream spec")
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--out", "-o", required=True,
                       help="output series CSV path")
    p_gen.add_argument("--labels", "-l", required=True,
                       help="output per-sample label CSV path")

    p_tr = sub.add_parser("trace-export", help="re-emit a stored trace")
    p_tr.add_argument("result", help="path to a result.json artifact")
    p_tr.add_argument("--format", "-f", choices=("csv", "json"), default="csv")
    p_tr.add_argument("--out", "-o", required=True)

    sub.add_parser("version", help="print the package version")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "analyze":
            return cmd_analyze(args)
        if args.command == "generate":
            return cmd_generate(args)
        if args.command == "trace-export":
            return cmd_trace_export(args)
        if args.command == "version":
            print(__version__)
            return EXIT_OK
        parser.print_help()
        return EXIT_CONFIG
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InsufficientDataError as exc:
        print(f"insufficient data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
