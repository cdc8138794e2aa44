"""Command-line front end: simulate, correlate, fit, range, snr, convert.

Every flag's help text names its unit. Subcommands are pure functions of
their inputs and flags; nothing reads the clock or global state (the single
escape hatch is ``simulate --seed-from-entropy``). Data files are written
only to explicitly given paths; human-readable summaries go to stdout.

Exit codes: 0 success, 1 user error (bad flags, bad files, unconverged fit),
2 internal error.
"""

from __future__ import annotations

import argparse
import json
import secrets
import sys
import traceback

import numpy as np

from . import correlator, estimator, presets, tagio
from .photonsim import ConfigurationError, simulate_ranging_scenario
from .quantities import DomainError, Medium

PROG = "bunchlidar"


class UserError(Exception):
    """Invalid invocation or input; reported without a traceback."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(message)


def _parse_window(text: str) -> tuple[int, int]:
    parts = text.split(":")
    if len(parts) != 2:
        raise UserError(f"window must be 'MIN:MAX' in ps, got {text!r}")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise UserError(f"window bounds must be integers in ps, got {text!r}") from None


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", metavar="NAME", default=None,
                   help=f"named built-in configuration: {', '.join(sorted(presets.PRESET_FILES))}")
    p.add_argument("--config", metavar="PATH", default=None,
                   help="JSON run-configuration file merged over the preset")
    p.add_argument("--set", metavar="PATH=VALUE", action="append", default=[],
                   help="override any configuration field by dotted path, e.g. "
                        "scenario.detectors.0.efficiency=0.4 (units are in the key names)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG,
                     description="Thermal-light photon-bunching ranging toolkit")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", help="simulate a two-detector ranging run into a tag file",
                       description="Simulate a ranging scenario and write timestamps plus "
                                   "a ground-truth JSON sidecar.")
    _add_config_flags(p)
    p.add_argument("--seed", type=int, default=None, help="RNG seed (dimensionless integer)")
    p.add_argument("--seed-from-entropy", action="store_true",
                   help="draw the seed from OS entropy instead (breaks reproducibility)")
    p.add_argument("--duration-s", type=float, default=None, help="acquisition duration in seconds")
    p.add_argument("--distance-m", type=float, default=None, help="target distance in meters")
    p.add_argument("--out", metavar="PATH", default=None, help="output tag file path")
    p.add_argument("--truth-out", metavar="PATH", default=None,
                   help="ground-truth JSON path (default: OUT + '.truth.json')")
    p.add_argument("--resolution-ps", type=int, default=None,
                   help="tag file tick size in picoseconds (1, 2 or 25 times a power of ten)")
    p.add_argument("--text", action="store_true", help="write the text tag format instead of binary")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("correlate", help="histogram timestamp differences of a 2-channel tag file",
                       description="Compute the coincidence histogram and write it as CSV "
                                   "(columns tau_ps,counts,g2,sigma).")
    _add_config_flags(p)
    p.add_argument("--in", dest="input", metavar="PATH", required=True,
                   help="input tag file (binary or text, sniffed by magic bytes)")
    p.add_argument("--bin-width-ps", type=int, default=None, help="histogram bin width in picoseconds")
    p.add_argument("--window-ps", metavar="MIN:MAX", default=None,
                   help="half-open lag window in picoseconds, e.g. --window-ps=-10000:10000")
    p.add_argument("--chunk-ticks", type=int, default=None,
                   help="process stream a in time chunks of this many picoseconds "
                        "(bit-identical result for any value)")
    p.add_argument("--out", metavar="PATH", required=True, help="output histogram CSV path")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("fit", help="fit the bunching peak in a histogram CSV",
                       description="Weighted fit of the displaced bunching model to g2(tau).")
    _add_config_flags(p)
    p.add_argument("--in", dest="input", metavar="PATH", required=True, help="histogram CSV path")
    p.add_argument("--out", metavar="PATH", default=None, help="fit-result JSON path")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("range", help="fit and report the target distance",
                       description="Fit the bunching peak and convert the delay to meters.")
    _add_config_flags(p)
    p.add_argument("--in", dest="input", metavar="PATH", required=True, help="histogram CSV path")
    p.add_argument("--refractive-index", type=float, default=1.0,
                   help="medium refractive index (dimensionless, >= 1)")
    p.add_argument("--out", metavar="PATH", default=None, help="result JSON path")
    p.set_defaults(func=cmd_range)

    p = sub.add_parser("snr", help="predict or measure the bunching-peak signal-to-noise",
                       description="Without --in: evaluate the shot-noise SNR formula. "
                                   "With --in: also measure amplitude over off-peak scatter.")
    p.add_argument("--in", dest="input", metavar="PATH", default=None,
                   help="histogram CSV path (enables measurement mode)")
    p.add_argument("--rate-hz", type=float, required=True,
                   help="photoevent rate in events per second (geometric mean of the channels)")
    p.add_argument("--v2", type=float, default=None,
                   help="squared visibility V^2 = g2(0) - 1 (dimensionless; prediction mode)")
    p.add_argument("--tauc-ns", type=float, default=None,
                   help="coherence time in nanoseconds (prediction mode)")
    p.add_argument("--dt-ms", type=float, required=True, help="integration time in milliseconds")
    p.add_argument("--out", metavar="PATH", default=None, help="SNR report JSON path")
    p.set_defaults(func=cmd_snr)

    p = sub.add_parser("convert", help="convert tag files between binary and text",
                       description="Lossless conversion between the binary and text tag formats.")
    p.add_argument("--in", dest="input", metavar="PATH", required=True, help="input tag file")
    p.add_argument("--out", metavar="PATH", required=True, help="output tag file")
    p.add_argument("--to", choices=("binary", "text"), required=True, help="output format")
    p.set_defaults(func=cmd_convert)

    return parser


def _resolve_document(args) -> dict:
    doc: dict = {}
    if getattr(args, "preset", None):
        doc = presets.load_preset(args.preset)
    if getattr(args, "config", None):
        doc = presets.merge_documents(doc, presets.load_config_file(args.config))
    for assignment in getattr(args, "set", []):
        presets.apply_dotted_override(doc, assignment)
    presets.validate_document(doc)
    return doc


def _read_any_tags(path):
    with open(path, "rb") as f:
        head = f.read(len(tagio.MAGIC))
    if head == tagio.MAGIC:
        return tagio.read_tags(path)
    return tagio.read_text_tags(path)


def cmd_simulate(args) -> int:
    doc = _resolve_document(args)
    scenario_doc = doc.setdefault("scenario", {})
    if args.seed_from_entropy:
        scenario_doc["seed"] = secrets.randbits(63)
    elif args.seed is not None:
        scenario_doc["seed"] = args.seed
    if args.duration_s is not None:
        scenario_doc["duration_s"] = args.duration_s
    if args.distance_m is not None:
        scenario_doc["distance_m"] = args.distance_m
    scenario = presets.scenario_from_document(doc)
    output = presets.output_from_document(doc)
    tags_path = args.out or output.tags_path
    if tags_path is None:
        raise UserError("no output path: pass --out or set output.tags_path")
    truth_path = args.truth_out or output.truth_path or f"{tags_path}.truth.json"
    resolution = args.resolution_ps if args.resolution_ps is not None else output.resolution_ps

    reference, probe, truth = simulate_ranging_scenario(scenario)
    if args.text:
        tagio.write_text_tags([reference, probe], resolution, tags_path)
    else:
        tagio.write_tags([reference, probe], resolution, tags_path, rounding="round")
    estimator.dump_json({"truth": truth, "configuration": doc}, truth_path)
    print(f"simulated {len(reference)} reference + {len(probe)} probe events "
          f"over {scenario.duration_s} s (seed {scenario.seed})")
    print(f"wrote {tags_path} (resolution {resolution} ps) and {truth_path}")
    return 0


def cmd_correlate(args) -> int:
    doc = _resolve_document(args)
    streams, header = _read_any_tags(args.input)
    if header["channel_count"] != 2:
        raise UserError(f"correlate needs a 2-channel file, got {header['channel_count']}")
    a, b = streams
    if len(a) + len(b) == 0:
        raise UserError("no events in input file")
    bin_width = args.bin_width_ps
    window = _parse_window(args.window_ps) if args.window_ps else None
    chunk = args.chunk_ticks
    if "correlation" in doc:
        settings = presets.correlation_from_document(doc)
        bin_width = bin_width if bin_width is not None else settings.bin_width_ps
        window = window if window is not None else settings.window_ps
        chunk = chunk if chunk is not None else settings.chunk_ticks
    if bin_width is None or window is None:
        raise UserError("need --bin-width-ps and --window-ps (or a correlation config section)")
    config = correlator.CorrelationConfig(
        bin_width_ticks=bin_width, tau_min_ticks=window[0], tau_max_ticks=window[1]
    )
    hist = correlator.cross_correlate(a, b, config, chunk_ticks=chunk)
    correlator.write_histogram_csv(hist, args.out)
    print(f"events: {hist.n_a} x {hist.n_b}; acquisition {hist.duration_s} s; "
          f"{int(hist.counts.sum())} pairs in [{window[0]}, {window[1]}) ps")
    print(f"wrote {args.out} ({config.n_bins} bins of {bin_width} ps)")
    return 0


def _fit_from_csv(args):
    tau_ps, _, g2, sigma = correlator.read_histogram_csv(args.input)
    spacing = np.diff(tau_ps)
    if spacing.size and not np.allclose(spacing, spacing[0], rtol=1e-9, atol=0.0):
        raise UserError("histogram CSV bins are not uniformly spaced")
    bin_width_s = (spacing[0] if spacing.size else 1.0) * 1e-12
    doc = _resolve_document(args)
    settings = presets.fit_from_document(doc)
    fit = estimator.fit_g2(
        tau_ps * 1e-12, g2, sigma, bin_width_s,
        max_iterations=settings.max_iterations, rel_tol=settings.rel_tol,
    )
    return fit, tau_ps


def cmd_fit(args) -> int:
    fit, _ = _fit_from_csv(args)
    record = estimator.fit_to_dict(fit)
    print(estimator.format_record(record))
    if args.out:
        estimator.dump_json(record, args.out)
        print(f"wrote {args.out}")
    if not fit.converged:
        raise UserError(f"fit did not converge after {fit.n_iterations} iterations "
                        f"(reduced chi2 {fit.reduced_chi2:.3g}); diagnostics above")
    return 0


def cmd_range(args) -> int:
    if args.refractive_index < 1.0:
        raise UserError(f"refractive index must be >= 1, got {args.refractive_index}")
    fit, _ = _fit_from_csv(args)
    record = estimator.fit_to_dict(fit)
    if not fit.converged:
        print(estimator.format_record(record))
        raise UserError("fit did not converge; diagnostics above")
    distance, distance_err = estimator.estimate_range(fit, Medium(args.refractive_index))
    record["distance_m"] = distance
    record["distance_err_m"] = distance_err
    record["refractive_index"] = args.refractive_index
    print(estimator.format_record(record))
    print(f"d = {distance:.6f} +/- {distance_err:.6f} m")
    if args.out:
        estimator.dump_json(record, args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_snr(args) -> int:
    dt_s = args.dt_ms * 1e-3
    if args.input is None:
        if args.v2 is None or args.tauc_ns is None:
            raise UserError("prediction mode needs --v2 and --tauc-ns")
        predicted = estimator.snr_predict(args.rate_hz, args.v2, args.tauc_ns * 1e-9, dt_s)
        record = {
            "predicted_snr": predicted,
            "rate_hz": args.rate_hz,
            "v2": args.v2,
            "coherence_time_s": args.tauc_ns * 1e-9,
            "integration_time_s": dt_s,
        }
        print(estimator.format_record(record))
    else:
        tau_ps, _, g2, sigma = correlator.read_histogram_csv(args.input)
        spacing = np.diff(tau_ps)
        bin_width_s = (spacing[0] if spacing.size else 1.0) * 1e-12
        fit = estimator.fit_g2(tau_ps * 1e-12, g2, sigma, bin_width_s)
        if not fit.converged:
            raise UserError("fit did not converge; cannot measure SNR")
        report = estimator.snr_measure(tau_ps * 1e-12, g2, fit, args.rate_hz, dt_s)
        record = estimator.snr_to_dict(report)
        print(estimator.format_record(record))
    if args.out:
        estimator.dump_json(record, args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_convert(args) -> int:
    streams, header = _read_any_tags(args.input)
    if args.to == "text":
        tagio.write_text_tags(streams, header["resolution_ps"], args.out)
    else:
        tagio.write_tags(streams, header["resolution_ps"], args.out, rounding="exact")
    total = sum(len(s) for s in streams)
    print(f"converted {total} events on {header['channel_count']} channels to {args.to}: {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UserError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except (UserError, presets.ConfigError, ConfigurationError, DomainError,
            correlator.CorrelationError, tagio.TagFileError, estimator.FitError,
            FileNotFoundError, ValueError) as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
