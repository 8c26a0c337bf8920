#!/usr/bin/env python3
"""Degeneracy study at the default grid (N, M in {1,10,100,1000}, 100 runs)."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from npmc.cli import main

if __name__ == "__main__":
    sys.exit(main(["degeneracy", "--out", "results/degeneracy", *sys.argv[1:]]))
