"""``prlstm`` command-line entry point.

Commands: train, eval, bench, ablate, gen-data, plan-inspect. Every command
accepts ``--config FILE`` (flat JSON, dotted keys) plus flag overrides and
``--set key=value`` for any config key. Errors print one JSON line on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import bench as B
from . import checkpoint
from . import config as C
from . import model as M
from . import scan
from .model import ModelConfig
from .tasks import encode_batch, generate, get_task, sample_rng, to_record
from .training import DivergenceError, EvalReport, evaluate, run_seeds, train

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_RESOURCES = 0, 2, 3, 4

log = logging.getLogger("prlstm")

# flag dest -> config key
FLAG_KEYS = {
    "task": "task", "out": "out", "preset": "preset", "seeds": "seeds", "checkpoint": "checkpoint",
    "seed": "train.seed", "steps": "train.steps", "batch_size": "train.batch_size", "lr": "train.lr",
    "d_h": "model.d_h", "R": "model.R", "model_variant": "model.variant",
    "eval_max_len": "train.eval_max_len",
    "variant": "bench.variant", "lengths": "bench.lengths", "batch": "bench.batch",
    "repeats": "bench.repeats", "threshold_ms": "bench.threshold_ms", "workers": "bench.workers",
    "bench_d_h": "bench.d_h",
    "length": "gen.length", "count": "gen.count",
}


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key")
    p.add_argument("--out")
    p.add_argument("--preset", choices=sorted(C.PRESETS))


def _training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--d-h", type=int)
    p.add_argument("--R", type=int)
    p.add_argument("--model-variant", choices=M.VARIANTS)
    p.add_argument("--eval-max-len", type=int)
    p.add_argument("--seeds", type=int)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="prlstm", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one model and evaluate it")
    _common(p)
    _training_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the evaluation lengths")
    _common(p)
    _training_flags(p)
    p.add_argument("--checkpoint")

    p = sub.add_parser("bench", help="forward-only timing sweep")
    _common(p)
    p.add_argument("--variant", choices=B.BENCH_VARIANTS)
    p.add_argument("--lengths", type=lambda s: [int(v) for v in s.split(",")])
    p.add_argument("--batch", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--threshold-ms", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--bench-d-h", type=int)

    p = sub.add_parser("ablate", help="baseline plus the six ablation variants")
    _common(p)
    _training_flags(p)

    p = sub.add_parser("gen-data", help="write task samples as JSON lines")
    _common(p)
    p.add_argument("--task")
    p.add_argument("--length", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("plan-inspect", help="print the scan schedule for a length")
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--csv", action="store_true")
    return ap


def _resolve(args) -> dict:
    file_values = C.load_file(args.config) if getattr(args, "config", None) else {}
    flags = {key: getattr(args, dest) for dest, key in FLAG_KEYS.items() if hasattr(args, dest)}
    for item in getattr(args, "set", []):
        key, sep, value = item.partition("=")
        if not sep:
            raise C.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        flags[key] = value
    return C.resolve(file_values, flags)


# --- commands --------------------------------------------------------------


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _save_model(out: Path, cfg: ModelConfig, task_name: str, params) -> None:
    checkpoint.save(out / "model.prl", {k: t.data for k, t in params.items()})
    (out / "model.json").write_text(json.dumps({**asdict(cfg), "task": task_name}, indent=2, sort_keys=True) + "\n")


def _write_eval(out: Path, report: EvalReport, chash: str, extra: dict | None = None) -> dict:
    _write_csv(out / "eval.csv", ["length", "accuracy"],
               [[n, f"{a:.6f}"] for n, a in sorted(report.per_length.items())])
    summary = {**report.summary(), "config_hash": chash, **(extra or {})}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _eval_lengths(task, tc):
    return task.lengths(tc.eval_min_len, tc.eval_max_len)


def cmd_train(cfg: dict) -> int:
    task = get_task(cfg["task"])
    mc, tc = C.model_config(cfg, task), C.train_config(cfg)
    out = Path(cfg["out"])
    chash = C.write_resolved(cfg, out)
    res = train(mc, task, tc)
    _save_model(out, mc, task.name, res.params)
    _write_csv(out / "loss.csv", ["step", "wall_ms", "loss"],
               [[s, f"{ms:.3f}", repr(v)] for s, ms, v in res.trace])
    report = evaluate(res.params, mc, task, _eval_lengths(task, tc), tc.eval_batch, tc.eval_seed, tc.seed)
    summary = _write_eval(out, report, chash, {"task": task.name, "variant": mc.variant})
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    if not cfg["checkpoint"]:
        raise C.ConfigError("eval needs --checkpoint")
    ck = Path(cfg["checkpoint"])
    sidecar = ck.with_suffix(".json")
    try:
        meta = json.loads(sidecar.read_text())
        arrays = checkpoint.load(ck)
    except (OSError, ValueError) as exc:
        raise C.ConfigError(f"cannot load checkpoint {ck}: {exc}") from None
    task = get_task(meta.pop("task"))
    mc = ModelConfig(**meta)
    params = {k: M.Tensor(v) for k, v in arrays.items()}
    tc = C.train_config(cfg)
    out = Path(cfg["out"])
    chash = C.write_resolved(cfg, out)
    report = evaluate(params, mc, task, _eval_lengths(task, tc), tc.eval_batch, tc.eval_seed, tc.seed)
    summary = _write_eval(out, report, chash, {"task": task.name, "variant": mc.variant})
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_bench(cfg: dict) -> int:
    bc = C.bench_config(cfg)
    out = Path(cfg["out"])
    chash = C.write_resolved(cfg, out)
    report = B.profile_inference(bc)
    B.emit_csv(report, out / "bench.csv")
    structural = [{"length": r.length, "live_states": r.live_states, "work": r.work, "depth": r.depth}
                  for r in report.records]
    summary = {"variant": bc.variant, "workers": bc.workers, "termination": report.termination,
               "structural": structural, "config_hash": chash}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for r in report.records:
        print(f"{r.variant} T={r.length} mean={r.mean_ms:.2f}ms std={r.std_ms:.2f}ms {r.termination}")
    return EXIT_OK


ABLATION_FIELDS = ["name", "variant", "d_h", "R", "best_seed", "score", "success", "seed_scores"]


def run_ablation(cfg: dict) -> list[dict]:
    task = get_task(cfg["task"])
    tc = C.train_config(cfg)
    base_seed = tc.seed
    rows = []
    for name, spec in C.ablation_grid(cfg):
        mc = C.model_config(cfg, task, **spec)

        def one(seed, mc=mc):
            tcs = C.train_config(cfg, seed=seed)
            res = train(mc, task, tcs)
            return evaluate(res.params, mc, task, _eval_lengths(task, tcs), tcs.eval_batch, tcs.eval_seed, seed)

        sweep = run_seeds(range(base_seed, base_seed + cfg["seeds"]), one)
        best = sweep.best
        rows.append({"name": name, "variant": mc.variant, "d_h": mc.d_h, "R": mc.R,
                     "best_seed": best.seed, "score": round(best.score, 6), "success": best.success,
                     "seed_scores": [round(s, 6) for s in sweep.scores]})
        log.info("%s: best %.4f", name, best.score)
    return rows


def cmd_ablate(cfg: dict) -> int:
    out = Path(cfg["out"])
    chash = C.write_resolved(cfg, out)
    rows = run_ablation(cfg)
    _write_csv(out / "ablation.csv", ABLATION_FIELDS,
               [[r[k] if k != "seed_scores" else " ".join(map(str, r[k])) for k in ABLATION_FIELDS]
                for r in rows])
    (out / "summary.json").write_text(json.dumps({"task": get_task(cfg["task"]).name, "rows": rows,
                                                  "config_hash": chash}, indent=2, sort_keys=True) + "\n")
    print(f"{'name':<24}{'d_h':>5}{'R':>3}{'score':>9}  success")
    for r in rows:
        print(f"{r['name']:<24}{r['d_h']:>5}{r['R']:>3}{r['score']:>9.4f}  {r['success']}")
    return EXIT_OK


def cmd_gen_data(cfg: dict) -> int:
    task = get_task(cfg["task"])
    n, seed = cfg["gen.length"], cfg["train.seed"]
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    C.write_resolved(cfg, out)
    path = out / f"{task.name}-{n}.jsonl"
    with path.open("w") as fh:
        for i in range(cfg["gen.count"]):
            sample = generate(task, n, sample_rng(seed, n, i))
            fh.write(json.dumps(to_record(task, sample, seed)) + "\n")
    print(path)
    return EXIT_OK


def plan_lines(T: int, as_csv: bool = False) -> list[str]:
    plan = scan.build_plan(T)
    lines = ["level,steps,pair,fill"] if as_csv else []
    for k, level in enumerate(plan.levels):
        a = sum(s.kind == scan.PAIR for s in level)
        b = len(level) - a
        lines.append(f"{k},{len(level)},{a},{b}" if as_csv else f"level {k}: {len(level)} steps (pair={a}, fill={b})")
    lines.append(f"depth={plan.depth} ops={plan.op_count}")
    return lines


def cmd_plan_inspect(args) -> int:
    if args.T < 1:
        raise C.ConfigError("--T must be >= 1")
    print("\n".join(plan_lines(args.T, args.csv)))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "bench": cmd_bench, "ablate": cmd_ablate,
            "gen-data": cmd_gen_data}


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "plan-inspect":
            return cmd_plan_inspect(args)
        cfg = _resolve(args)
        get_task(cfg["task"])
        return COMMANDS[args.command](cfg)
    except (C.ConfigError, ValueError) as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except DivergenceError as exc:
        return _fail("divergence", str(exc), EXIT_DIVERGED)
    except MemoryError as exc:
        return _fail("resources", f"out of memory: {exc}", EXIT_RESOURCES)
    except OSError as exc:
        return _fail("resources", str(exc), EXIT_RESOURCES)


if __name__ == "__main__":
    sys.exit(main())
