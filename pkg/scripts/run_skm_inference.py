#!/usr/bin/env python3
"""Predator-prey rate inference at desk scale (M=500, L=10, J=100, 10 runs)."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from npmc.cli import main

if __name__ == "__main__":
    sys.exit(main(["skm", "--out", "results/skm", *sys.argv[1:]]))
