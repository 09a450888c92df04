"""Run the acceptance criteria and write results to a directory.

Usage: python scripts/run_acceptance.py [--out DIR] [--jobs N] [criterion ...]
"""
import argparse
import json
import sys
from pathlib import Path

from preqinfo import suites
from preqinfo.jobs import resolve_jobs


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("criteria", nargs="*", type=int, help="criterion numbers (default: all)")
    ap.add_argument("--out", default="runs/acceptance")
    ap.add_argument("--jobs", type=int, default=None)
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = suites.Context(jobs=resolve_jobs(args.jobs))
    results = suites.run_acceptance(args.criteria or list(suites.CRITERIA), ctx, out, echo=print)
    (out / "acceptance.json").write_text(json.dumps([r.to_dict() for r in results], indent=2, default=str) + "\n")
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    return 0 if passed == len(results) else 3


if __name__ == "__main__":
    sys.exit(main())
