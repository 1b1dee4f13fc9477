"""Run the acceptance checks and write verify.csv; same as ``pcv verify``.

    python scripts/run_verify.py --out results/ [--only 1,2,7]
"""

import sys

from pcv.cli import main

if __name__ == "__main__":
    args = sys.argv[1:]
    if "--only" in args:
        i = args.index("--only")
        args[i:i + 2] = ["--set", f"only={args[i + 1]}"]
    sys.exit(main(["verify", *args]))
