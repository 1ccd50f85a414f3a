"""Adam training, length-generalization evaluation and seed sweeps."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import model as M
from .model import ModelConfig, Params
from .tasks import Batch, TaskSpec, encode_batch, generate_batch
from .tensor import Tape, backward

log = logging.getLogger(__name__)

SUCCESS_THRESHOLD = 0.90


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int = 40000
    batch_size: int = 128
    lr: float = 1e-3
    clip_norm: float = 1.0
    seed: int = 0
    train_min_len: int = 1
    train_max_len: int = 40
    eval_min_len: int = 41
    eval_max_len: int = 500
    eval_batch: int = 128
    eval_seed: int = 1234

    def __post_init__(self):
        if self.eval_min_len <= self.train_max_len:
            raise ValueError("evaluation lengths must exceed the training maximum")
        if self.steps < 0 or self.batch_size < 1 or self.train_min_len < 1:
            raise ValueError(f"invalid train config {asdict(self)}")


class Adam:
    def __init__(self, params: Sequence, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def clip_global_norm(params: Sequence, max_norm: float) -> float:
    """Scale all gradients jointly so their global L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            p.grad *= scale
    return norm


@dataclass
class TrainResult:
    params: Params
    trace: list[tuple[int, float, float]] = field(default_factory=list)  # step, wall_ms, loss


def length_sampler(task: TaskSpec, tc: TrainConfig, rng: np.random.Generator) -> Callable[[int], Batch]:
    """Batches whose input length is uniform over the valid training lengths."""
    lengths = task.lengths(tc.train_min_len, tc.train_max_len)
    if not lengths:
        raise ValueError(f"{task.name}: no valid training lengths in [{tc.train_min_len}, {tc.train_max_len}]")

    def draw(step: int) -> Batch:
        n = lengths[int(rng.integers(0, len(lengths)))]
        return encode_batch(task, generate_batch(task, n, tc.batch_size, rng))
    return draw


def train(cfg: ModelConfig, task: TaskSpec, tc: TrainConfig,
          batches: Callable[[int], Batch] | None = None,
          callback: Callable[[int, float], None] | None = None) -> TrainResult:
    """Adam with global-norm clipping; ``batches(step)`` overrides the length sampler."""
    init_rng, data_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(tc.seed).spawn(2))
    params = M.init_params(cfg, init_rng)
    plist = list(params.values())
    opt = Adam(plist, lr=tc.lr)
    draw = batches or length_sampler(task, tc, data_rng)
    result = TrainResult(params)
    t0 = time.perf_counter()
    for step in range(1, tc.steps + 1):
        batch = draw(step)
        n = batch.x.shape[1]
        for p in plist:
            p.zero_grad()
        with Tape() as tape:
            loss = M.loss(batch.x, batch.targets, batch.mask, cfg, params)
        value = loss.item()
        if not math.isfinite(value):
            raise DivergenceError(f"non-finite loss {value} at step {step} (length {n})")
        backward(tape, loss, plist)
        clip_global_norm(plist, tc.clip_norm)
        opt.step()
        result.trace.append((step, (time.perf_counter() - t0) * 1e3, value))
        if callback is not None:
            callback(step, value)
        if step % 1000 == 0:
            log.info("%s %s step %d loss %.4f", cfg.variant, task.name, step, value)
    return result


@dataclass
class EvalReport:
    per_length: dict[int, float]
    seed: int = 0

    @property
    def score(self) -> float:
        return float(np.mean(list(self.per_length.values())))

    @property
    def success(self) -> bool:
        return self.score >= SUCCESS_THRESHOLD

    def summary(self) -> dict:
        return {"score": self.score, "success": self.success, "seed": self.seed}


def eval_batch(task: TaskSpec, n: int, size: int, eval_seed: int):
    return encode_batch(task, generate_batch(task, n, size, np.random.default_rng([eval_seed, n])))


def evaluate_predictor(predict: Callable[[np.ndarray, np.ndarray], np.ndarray], task: TaskSpec,
                       lengths: Sequence[int], batch: int = 128, eval_seed: int = 1234,
                       seed: int = 0) -> EvalReport:
    """Per length: mean exact match over masked positions of a fixed batch."""
    lengths = [n for n in lengths if task.valid(n)]
    if not lengths:
        raise ValueError("no valid evaluation lengths")
    per = {}
    for n in lengths:
        b = eval_batch(task, n, batch, eval_seed)
        per[n] = float(np.mean(predict(b.x, b.mask) == b.targets))
    return EvalReport(per, seed)


def evaluate(params: Params, cfg: ModelConfig, task: TaskSpec, lengths: Sequence[int],
             batch: int = 128, eval_seed: int = 1234, seed: int = 0) -> EvalReport:
    return evaluate_predictor(lambda x, mask: M.predict(x, mask, cfg, params),
                              task, lengths, batch, eval_seed, seed)


@dataclass
class SeedSweep:
    reports: list[EvalReport]

    @property
    def scores(self) -> list[float]:
        return [r.score for r in self.reports]

    @property
    def best(self) -> EvalReport:
        return max(self.reports, key=lambda r: r.score)


def run_seeds(seeds: int | Sequence[int], run: Callable[[int], EvalReport]) -> SeedSweep:
    seeds = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    return SeedSweep([run(s) for s in seeds])


def train_and_evaluate(cfg: ModelConfig, task: TaskSpec, tc: TrainConfig) -> tuple[TrainResult, EvalReport]:
    res = train(cfg, task, tc)
    lengths = task.lengths(tc.eval_min_len, tc.eval_max_len)
    return res, evaluate(res.params, cfg, task, lengths, tc.eval_batch, tc.eval_seed, tc.seed)
