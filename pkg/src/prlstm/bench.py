"""Inference timing sweeps and work/depth runtime predictions."""
from __future__ import annotations

import csv
import os
import statistics
import time
import tracemalloc
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import model as M
from . import scan

WARMUP = 3
CSV_FIELDS = ("variant", "length", "mean_ms", "std_ms", "peak_mem_bytes", "termination")
# "empty" walks the scan plan with a no-op combiner: the harness overhead baseline
BENCH_VARIANTS = M.VARIANTS + ("empty",)


def default_workers() -> int:
    return int(os.environ.get("PRLSTM_WORKERS", "1"))


@dataclass
class BenchConfig:
    variant: str = "pr-lstm"
    lengths: Sequence[int] = (256, 512, 1024, 2048, 4096)
    batch: int = 1024
    repeats: int = 100
    threshold_ms: float = 500.0
    workers: int = field(default_factory=default_workers)
    d_h: int = 64
    d_x: int = 3
    R: int = 1
    seed: int = 0

    def __post_init__(self):
        self.lengths = tuple(int(n) for n in self.lengths)
        if list(self.lengths) != sorted(self.lengths) or not self.lengths or self.lengths[0] < 1:
            raise ValueError("lengths must be positive and ascending")
        if self.repeats < 1 or self.batch < 1 or self.workers < 1:
            raise ValueError("repeats, batch and workers must be >= 1")
        if self.variant not in BENCH_VARIANTS:
            raise ValueError(f"unknown bench variant {self.variant!r}")


@dataclass
class BenchRecord:
    variant: str
    length: int
    mean_ms: float
    std_ms: float
    peak_mem_bytes: int
    termination: str = "completed"
    # exact structural counts, alongside the informative byte measurement
    live_states: int = 0
    work: int = 0
    depth: int = 0


@dataclass
class BenchReport:
    records: list[BenchRecord] = field(default_factory=list)

    @property
    def termination(self) -> str:
        return self.records[-1].termination if self.records else "completed"

    def mean_ms(self, length: int) -> float:
        return next(r.mean_ms for r in self.records if r.length == length)


def structural_counts(variant: str, T: int) -> tuple[int, int, int]:
    """(live states, work, depth) for one forward pass of length ``T``."""
    if variant in ("seq-lstm", "seq-rnn"):
        # per-position outputs plus the running state
        return T + 1, T, T
    plan = scan.build_plan(T)
    work, depth = scan.depth_work(plan)
    return scan.live_states(plan), work, depth


def _inputs(cfg: BenchConfig, T: int) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, T])
    return np.eye(cfg.d_x, dtype=np.float32)[rng.integers(0, cfg.d_x, (cfg.batch, T))]


def _runner(cfg: BenchConfig):
    """Return ``run(x) -> executed depth`` for the configured variant."""
    if cfg.variant == "empty":
        def run(x):
            T = x.shape[1]
            levels = 0

            def level_fn(lefts, rights):
                nonlocal levels
                levels += 1
                return rights
            scan.execute_levels(scan.build_plan(T), list(range(T)), level_fn)
            return levels
        return run

    mcfg = M.ModelConfig(d_h=cfg.d_h, d_x=cfg.d_x, R=cfg.R, variant=cfg.variant, K_out=2)
    params = M.init_params(mcfg, cfg.seed)

    def run(x):
        M.forward(x, mcfg, params, workers=cfg.workers)
        T = x.shape[1]
        return T if not mcfg.recursive else scan.build_plan(T).depth
    return run


def _measure_peak(run, x) -> int:
    tracemalloc.start()
    try:
        run(x)
        return tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()


def profile_inference(cfg: BenchConfig, measure_memory: bool = True) -> BenchReport:
    """Forward-only sweep over ``cfg.lengths``.

    Each length gets ``WARMUP`` discarded runs and ``cfg.repeats`` timed ones.
    The sweep stops after the first length whose mean reaches the threshold,
    or whose allocation fails.
    """
    report = BenchReport()
    run = _runner(cfg)
    with threadpool_limits(1):
        for T in cfg.lengths:
            live, work, depth = structural_counts(cfg.variant, T)
            try:
                x = _inputs(cfg, T)
                times = []
                for i in range(WARMUP + cfg.repeats):
                    t0 = time.perf_counter()
                    executed = run(x)
                    dt = (time.perf_counter() - t0) * 1e3
                    if i >= WARMUP:
                        times.append(dt)
                peak = _measure_peak(run, x) if measure_memory else 0
            except MemoryError:
                report.records.append(BenchRecord(cfg.variant, T, float("nan"), float("nan"), 0,
                                                  "memory", live, work, depth))
                break
            if executed != depth:
                raise AssertionError(f"executed depth {executed} != planned depth {depth} at T={T}")
            mean = statistics.fmean(times)
            std = statistics.pstdev(times) if len(times) > 1 else 0.0
            done = mean >= cfg.threshold_ms
            report.records.append(BenchRecord(cfg.variant, T, mean, std, peak,
                                              "time_threshold" if done else "completed", live, work, depth))
            if done:
                break
    return report


def predict_runtime(T: int, p: int, variant: str = "pr-lstm", op_cost: float = 1.0) -> float:
    """Brent bound ``op_cost * (depth + work / p)``."""
    if T < 1 or p < 1:
        raise ValueError("T and p must be >= 1")
    _, work, depth = structural_counts(variant, T)
    return op_cost * (depth + work / p)


def fit_op_cost(report: BenchReport, p: int) -> float:
    """Least-squares per-op cost making :func:`predict_runtime` match measured means."""
    pts = [(predict_runtime(r.length, p, r.variant), r.mean_ms) for r in report.records
           if np.isfinite(r.mean_ms)]
    num = sum(a * b for a, b in pts)
    den = sum(a * a for a, _ in pts)
    return num / den if den else 0.0


def emit_csv(report: BenchReport, path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_FIELDS)
            for r in sorted(report.records, key=lambda r: (r.variant, r.length)):
                w.writerow([r.variant, r.length, f"{r.mean_ms:.6f}", f"{r.std_ms:.6f}",
                            r.peak_mem_bytes, r.termination])
    except OSError as exc:
        raise OSError(f"cannot write bench CSV to {path}: {exc.strerror}") from exc


def read_csv(path) -> list[BenchRecord]:
    with Path(path).open(newline="") as fh:
        return [BenchRecord(row["variant"], int(row["length"]), float(row["mean_ms"]),
                            float(row["std_ms"]), int(row["peak_mem_bytes"]), row["termination"])
                for row in csv.DictReader(fh)]


def linear_fit(xs: Sequence[int], ys: Sequence[int]) -> tuple[float, float, float]:
    """Least-squares line through the points: (slope, intercept, max abs residual)."""
    xs_, ys_ = np.asarray(xs, float), np.asarray(ys, float)
    A = np.stack([xs_, np.ones_like(xs_)], axis=1)
    (c1, c2), *_ = np.linalg.lstsq(A, ys_, rcond=None)
    return float(c1), float(c2), float(np.max(np.abs(A @ [c1, c2] - ys_)))
