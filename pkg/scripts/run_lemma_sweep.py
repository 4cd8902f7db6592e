#!/usr/bin/env python3
"""Closed-form vs fixed-point vs Monte Carlo steady-state variance table."""
import sys

from avgsgd.experiment_cli import main

ARGS = [
    "lemma-sweep",
    "--trials", "20000",
    "--horizon", "500",
    "--workers", "4",
    "--alpha", "0.1",
    "--beta2", "0,1",
    "--zeta", "0,0.1,1",
    "--out", "results/lemma",
]

if __name__ == "__main__":
    sys.exit(main(ARGS + sys.argv[1:]))
