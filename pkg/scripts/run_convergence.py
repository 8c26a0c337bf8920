#!/usr/bin/env python3
"""Estimator error decay with clip count ceil(sqrt(M)) over M up to 1e5."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from npmc.cli import main

if __name__ == "__main__":
    sys.exit(main(["convergence", "--out", "results/convergence", *sys.argv[1:]]))
