"""Run the reproduction scenarios in scripts/configs.

    python scripts/reproduce.py                 # all
    python scripts/reproduce.py profile cmo     # a subset
    python scripts/reproduce.py --out runs/x    # output root
"""
import argparse
import sys
from pathlib import Path

from roughguide import cli

HERE = Path(__file__).resolve().parent
ORDER = ("roughness", "profile", "stability", "cmo", "lifetime")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("names", nargs="*", metavar="name", help="one of " + ", ".join(ORDER))
    ap.add_argument("--out", default="runs")
    args = ap.parse_args(argv)
    bad = [n for n in args.names if n not in ORDER]
    if bad:
        ap.error(f"unknown scenario(s): {', '.join(bad)}")
    status = 0
    for name in args.names or ORDER:
        print(f"== {name}", flush=True)
        code = cli.main([name, "--config", str(HERE / "configs" / f"{name}.yaml"),
                         "--out", str(Path(args.out) / name)])
        status = status or code
    return status


if __name__ == "__main__":
    sys.exit(main())
