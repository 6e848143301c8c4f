"""Print the optimal slack and required state count for both operating points."""
import sys

from qmoney import cli

if __name__ == "__main__":
    sys.exit(cli.main(["optimize", *sys.argv[1:]]))
