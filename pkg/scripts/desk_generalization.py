"""Length generalization at desk scale: train on 1..40, score on 41..max.

    python scripts/desk_generalization.py --tasks parity-check even-pairs --out runs/desk
"""
import argparse
import csv
import logging
from pathlib import Path

from prlstm import config as C
from prlstm.tasks import TASKS, get_task
from prlstm.training import evaluate, run_seeds, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tasks", nargs="+", default=sorted(TASKS))
    ap.add_argument("--variants", nargs="+", default=["pr-lstm"])
    ap.add_argument("--preset", default="desk")
    ap.add_argument("--seeds", type=int)
    ap.add_argument("--steps", type=int)
    ap.add_argument("--out", default="runs/desk")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in args.tasks:
        task = get_task(name)
        for variant in args.variants:
            flags = {"preset": args.preset, "task": name, "model.variant": variant,
                     "seeds": args.seeds, "train.steps": args.steps}
            cfg = C.resolve(flags=flags)
            mc = C.model_config(cfg, task)

            def one(seed):
                tc = C.train_config(cfg, seed=seed)
                res = train(mc, task, tc)
                return evaluate(res.params, mc, task, task.lengths(tc.eval_min_len, tc.eval_max_len),
                                tc.eval_batch, tc.eval_seed, seed)

            sweep = run_seeds(cfg["seeds"], one)
            best = sweep.best
            rows.append([task.name, task.level, variant, f"{best.score:.4f}", best.success, best.seed,
                         " ".join(f"{s:.4f}" for s in sweep.scores)])
            print(*rows[-1], sep="\t", flush=True)

    with (out / "generalization.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "level", "variant", "best_score", "success", "best_seed", "seed_scores"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
