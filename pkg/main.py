"""
misclass - identification and estimation with a misclassified endogenous binary regressor.

Command-line entry point. Run ``python main.py --help`` for the subcommands
(identify, estimate, simulate, montecarlo, effects).
"""

import sys

from cli.commands import main

if __name__ == "__main__":
    sys.exit(main())
