#!/usr/bin/env python3
"""Run the manufactured-solution convergence study and print the rate table.

Thin wrapper over `penflow converge`; keeps a copy of the resolved CSV path
on stdout so the study is one command from a fresh checkout:

    python3 scripts/run_convergence.py --levels 27,41,61 --outdir out/converge
"""

import sys

from penflow.cli import main

if __name__ == "__main__":
    sys.exit(main(["converge", *sys.argv[1:]]))
