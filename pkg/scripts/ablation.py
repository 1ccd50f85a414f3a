"""Architecture ablation on one task: baseline, parameter-matched size, R in {0, 2}, PR-RNN R in {0, 1, 2}.

Thin wrapper over the ``ablate`` command that also prints the scores relative
to the baseline row.

    python scripts/ablation.py --task bucket-sort --preset desk --out runs/ablation
"""
import argparse
import json
import sys
from pathlib import Path

from prlstm.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--task", default="bucket-sort")
    ap.add_argument("--preset", default="desk")
    ap.add_argument("--seeds", type=int)
    ap.add_argument("--steps", type=int)
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()

    argv = ["ablate", "--task", args.task, "--preset", args.preset, "--out", args.out]
    if args.seeds:
        argv += ["--seeds", str(args.seeds)]
    if args.steps:
        argv += ["--steps", str(args.steps)]
    code = cli(argv)
    if code:
        sys.exit(code)
    rows = json.loads((Path(args.out) / "summary.json").read_text())["rows"]
    base = rows[0]["score"]
    print()
    for r in rows[1:]:
        print(f"{r['name']:<24} {r['score'] - base:+.4f} vs baseline")


if __name__ == "__main__":
    main()
