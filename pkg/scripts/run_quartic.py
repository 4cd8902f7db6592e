#!/usr/bin/env python3
"""Averaging-frequency sweep on the quartic double well.

Reproduces the non-convex trap experiment: one-shot averaging of workers
that settle in opposite wells lands the average on the hump, while even
rare averaging keeps the fleet in one basin.
"""
import sys

from avgsgd.experiment_cli import main

ARGS = [
    "quartic",
    "--workers", "24",
    "--steps", "10000",
    "--repeats", "100",
    "--alpha", "0.025",
    "--schedule", "oneshot",
    "--schedule", "bernoulli:0.001",
    "--schedule", "bernoulli:0.01",
    "--schedule", "bernoulli:0.1",
    "--out", "results/quartic",
]

if __name__ == "__main__":
    sys.exit(main(ARGS + sys.argv[1:]))
