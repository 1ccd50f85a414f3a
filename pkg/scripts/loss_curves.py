"""Training loss against wall-clock time for the recursive and sequential models.

    python scripts/loss_curves.py --task parity-check --steps 1000 --out runs/curves
"""
import argparse
import csv
from pathlib import Path

from prlstm import config as C
from prlstm.tasks import get_task
from prlstm.training import train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--task", default="parity-check")
    ap.add_argument("--variants", nargs="+", default=["pr-lstm", "seq-lstm"])
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--d-h", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/curves")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    task = get_task(args.task)
    with (out / f"{task.name}.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "step", "wall_ms", "loss"])
        for variant in args.variants:
            cfg = C.resolve(flags={"task": task.name, "model.variant": variant, "model.d_h": args.d_h,
                                   "train.steps": args.steps, "train.seed": args.seed})
            res = train(C.model_config(cfg, task), task, C.train_config(cfg))
            w.writerows([variant, s, f"{ms:.3f}", f"{v:.6f}"] for s, ms, v in res.trace)
            s, ms, v = res.trace[-1]
            print(f"{variant}: step {s} at {ms / 1e3:.1f}s loss {v:.4f}", flush=True)


if __name__ == "__main__":
    main()
