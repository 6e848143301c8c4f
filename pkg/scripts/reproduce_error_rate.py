"""Honest error rate against l, 10 fresh banknotes per grid point.

Writes error_rate.csv next to the working directory unless --output is given.
Extra arguments are passed to the CLI (e.g. --device detailed --workers 4).
"""
import sys

from qmoney import cli

if __name__ == "__main__":
    args = sys.argv[1:]
    if "--output" not in args:
        args += ["--output", "error_rate.csv"]
    sys.exit(cli.main(["experiment-error-rate", *args]))
