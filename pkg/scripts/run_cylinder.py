#!/usr/bin/env python3
"""Run the rotating-crescent ensemble study on the bundled mesh.

Thin wrapper over `penflow cylinder`:

    python3 scripts/run_cylinder.py --profile ci --outdir out/cylinder
    python3 scripts/run_cylinder.py --profile full --T 100 --outdir out/full
"""

import sys

from penflow.cli import main

if __name__ == "__main__":
    sys.exit(main(["cylinder", *sys.argv[1:]]))
