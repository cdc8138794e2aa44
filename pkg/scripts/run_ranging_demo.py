#!/usr/bin/env python3
"""Run a preset ranging experiment end to end and print the recovered distance.

Writes the tag file, truth sidecar, histogram CSV, and fit JSON into an output
directory, then compares the fitted distance against the configured truth.

Usage: python scripts/run_ranging_demo.py [preset] [outdir]
       preset defaults to short-range, outdir to ./demo_out
"""

import json
import pathlib
import sys

from bunchlidar import cli


def main() -> int:
    preset = sys.argv[1] if len(sys.argv) > 1 else "short-range"
    outdir = pathlib.Path(sys.argv[2] if len(sys.argv) > 2 else "demo_out")
    outdir.mkdir(parents=True, exist_ok=True)
    tags = outdir / f"{preset}.bin"
    hist = outdir / f"{preset}.csv"
    fit = outdir / f"{preset}.fit.json"

    for argv in (
        ["simulate", "--preset", preset, "--out", str(tags)],
        ["correlate", "--preset", preset, "--in", str(tags), "--out", str(hist)],
        ["range", "--preset", preset, "--in", str(hist), "--out", str(fit)],
    ):
        code = cli.main(argv)
        if code != 0:
            return code

    truth = json.loads((outdir / f"{preset}.bin.truth.json").read_text())["truth"]
    result = json.loads(fit.read_text())
    print(f"\ntrue distance   : {truth['distance_m']} m")
    print(f"fitted distance : {result['distance_m']:.6f} +/- {result['distance_err_m']:.6f} m")
    print(f"error           : {(result['distance_m'] - truth['distance_m']) * 1e3:.3f} mm")
    return 0


if __name__ == "__main__":
    sys.exit(main())
