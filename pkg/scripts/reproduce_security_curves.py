"""Forging bound against l for beta = 0.033 and beta = 0, plus target crossings."""
import sys

from qmoney import cli

if __name__ == "__main__":
    args = sys.argv[1:]
    if "--output" not in args:
        args += ["--output", "security_curves.csv"]
    sys.exit(cli.main(["security-curves", *args]))
