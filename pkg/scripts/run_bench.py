"""Run the acceptance benchmark and print one line per criterion.

    python3 scripts/run_bench.py [--out DIR] [--determinism]

Same as ``tsrefine bench``; kept as a script so it can be run from a checkout.
"""

import sys

from tsrefine.cli import main

if __name__ == "__main__":
    sys.exit(main(["bench", *sys.argv[1:]]))
