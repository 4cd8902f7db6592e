#!/usr/bin/env python3
"""Grid-searched schedule comparison on a least-squares instance.

Pass --synthetic lowrho (or --data PATH) to override; extra flags are
forwarded to the CLI as-is.
"""
import sys

from avgsgd.experiment_cli import main

ARGS = [
    "convex-compare",
    "--synthetic", "highrho",
    "--workers", "16",
    "--steps", "4096",
    "--repeats", "2",
    "--schedule", "oneshot",
    "--schedule", "every:128",
    "--schedule", "every:1024",
    "--grid-alpha", "0.002,0.008,0.03,0.12,0.5",
    "--grid-d", "inf,1000",
    "--out", "results/convex",
]

if __name__ == "__main__":
    sys.exit(main(ARGS + sys.argv[1:]))
