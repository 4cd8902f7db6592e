#!/usr/bin/env python3
"""Streaming PCA ladder: error of the averaged iterate vs averaging cadence."""
import sys

from avgsgd.experiment_cli import main

# Default schedule ladder (oneshot, every:1000, every:100, every:10, minibatch)
# comes from the runner when no --schedule is given.
ARGS = [
    "pca",
    "--workers", "48",
    "--steps", "10000",
    "--repeats", "100",
    "--out", "results/pca",
]

if __name__ == "__main__":
    sys.exit(main(ARGS + sys.argv[1:]))
