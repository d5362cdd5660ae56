"""Run the six-variant ordering experiment at the acceptance profile.

Usage: python3 scripts/ordering_experiment.py OUT_DIR [--seeds 0 1 2 3 4] [--workers N]
"""
import argparse
import json

from ldankit.experiment import acceptance_profile, ordering_checks, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out")
    ap.add_argument("--seeds", type=int, nargs="+")
    ap.add_argument("--workers", type=int, help="parallel seed processes (default: cores)")
    args = ap.parse_args()
    prof = acceptance_profile()
    if args.seeds:
        prof.seeds = tuple(args.seeds)
    res = run_experiment(prof, args.out, progress=lambda s: print(s, flush=True), workers=args.workers)
    print(json.dumps(res["summary"], indent=2))
    print(json.dumps(ordering_checks(res["summary"]), indent=2))
    print(f"total {res['seconds_total']:.1f}s")


if __name__ == "__main__":
    main()
