"""Inference-time scaling sweep with work/depth predictions alongside.

For each variant, times forward passes over growing lengths, fits one per-op
cost to the Brent bound, and writes measured vs predicted milliseconds.

    python scripts/scaling.py --workers 4 --d-h 16 --out runs/scaling
"""
import argparse
import csv
from pathlib import Path

from prlstm import bench as B


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--variants", nargs="+", default=["pr-lstm", "seq-lstm", "empty"])
    ap.add_argument("--lengths", type=lambda s: [int(v) for v in s.split(",")],
                    default=[256, 512, 1024, 2048, 4096])
    ap.add_argument("--batch", type=int, default=1024)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--threshold-ms", type=float, default=60_000)
    ap.add_argument("--workers", type=int, default=B.default_workers())
    ap.add_argument("--d-h", type=int, default=16)
    ap.add_argument("--out", default="runs/scaling")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    merged = B.BenchReport()
    rows = []
    for variant in args.variants:
        cfg = B.BenchConfig(variant=variant, lengths=args.lengths, batch=args.batch, repeats=args.repeats,
                            threshold_ms=args.threshold_ms, workers=args.workers, d_h=args.d_h)
        report = B.profile_inference(cfg)
        merged.records += report.records
        if variant == "empty":
            continue
        cost = B.fit_op_cost(report, args.workers)
        for r in report.records:
            pred = B.predict_runtime(r.length, args.workers, variant, cost)
            rows.append([variant, r.length, f"{r.mean_ms:.3f}", f"{pred:.3f}", r.work, r.depth, r.live_states])
            print(*rows[-1], sep="\t", flush=True)
        first, last = report.records[0], report.records[-1]
        print(f"{variant}: t({last.length})/t({first.length}) = {last.mean_ms / first.mean_ms:.2f}")

    B.emit_csv(merged, out / "bench.csv")
    with (out / "prediction.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "length", "measured_ms", "predicted_ms", "work", "depth", "live_states"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
