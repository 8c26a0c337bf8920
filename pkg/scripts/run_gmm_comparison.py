#!/usr/bin/env python3
"""Algorithm comparison on the mixture posterior (M=200, L=20, 100 runs, quadrature oracle)."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from npmc.cli import main

if __name__ == "__main__":
    sys.exit(main(["gmm", "--out", "results/gmm", *sys.argv[1:]]))
