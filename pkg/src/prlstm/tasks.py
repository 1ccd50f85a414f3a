"""Formal-language tasks: generators, label oracles and one-hot encoding.

``generate(task, n, rng)`` draws a task input of length ``n`` and labels it
with the task oracle. Sequence-output tasks append one ``PAD`` per output
token and the mask marks those positions; single-label tasks are read at the
last input position. Every vocabulary ends with the reserved ``PAD`` symbol,
which is never a target.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

PAD = "PAD"
BITS = ("0", "1")
DIGITS = ("0", "1", "2", "3", "4")
MOVES = ("STAY", "+1", "-1")
OPS = ("+", "-", "*")
ACTIONS = ("POP", "PUSH0", "PUSH1")
MASK = "MASK"
EMPTY = "EMPTY"


@dataclass(frozen=True)
class TaskSpec:
    name: str
    level: str
    symbols: tuple[str, ...]
    outputs: tuple[str, ...]
    sample: Callable[[int, np.random.Generator], list[str]]
    oracle: Callable[[Sequence[str]], list[str]]
    # None means a single label read at the last input position
    out_len: Callable[[int], int] | None = None
    valid: Callable[[int], bool] = lambda n: n >= 1

    @property
    def input_vocab(self) -> tuple[str, ...]:
        return self.symbols + (PAD,)

    @property
    def output_vocab(self) -> tuple[str, ...]:
        return self.outputs + (PAD,)

    @property
    def n_classes(self) -> int:
        return len(self.outputs)

    def output_length(self, n: int) -> int:
        return 1 if self.out_len is None else self.out_len(n)

    def total_length(self, n: int) -> int:
        return n if self.out_len is None else n + self.out_len(n)

    def lengths(self, lo: int, hi: int) -> list[int]:
        """Valid input lengths in ``[lo, hi]``."""
        return [n for n in range(lo, hi + 1) if self.valid(n)]


@dataclass
class TaskSample:
    input: list[str]
    target: list[str]
    mask: list[bool]

    def __post_init__(self):
        if len(self.mask) != len(self.input):
            raise ValueError("mask length must equal input length")
        if sum(self.mask) != len(self.target):
            raise ValueError("one target per masked position")


# --- oracles ---------------------------------------------------------------


def even_pairs(w):
    return ["1" if w[0] == w[-1] else "0"]


def parity_check(w):
    return [str(sum(t == "1" for t in w) % 2)]


def cycle_navigation(moves):
    step = {"STAY": 0, "+1": 1, "-1": -1}
    return [str(sum(step[m] for m in moves) % 5)]


def modular_arithmetic(expr):
    acc = int(expr[0])
    for op, digit in zip(expr[1::2], expr[2::2]):
        v = int(digit)
        acc = (acc + v if op == "+" else acc - v if op == "-" else acc * v) % 5
    return [str(acc % 5)]


def reverse_string(w):
    return list(reversed(w))


def stack_manipulation(tokens):
    """Initial stack bottom-to-top, then actions; result top-to-bottom padded with EMPTY."""
    stack: list[str] = []
    for t in tokens:
        if t in BITS:
            stack.append(t)
        elif t == "POP":
            if stack:
                stack.pop()
        else:
            stack.append(t[-1])
    out = stack[::-1]
    return out + [EMPTY] * (len(tokens) - len(out))


def missing_duplicate(tokens):
    half = len(tokens) // 2
    k = tokens.index(MASK)
    return [tokens[k + half] if k < half else tokens[k - half]]


def duplicate_string(w):
    return list(w) + list(w)


def bucket_sort(w):
    return sorted(w, key=int)


# --- samplers --------------------------------------------------------------


def _pick(rng, alphabet, n):
    return [alphabet[i] for i in rng.integers(0, len(alphabet), n)]


def _sample_arith(n, rng):
    digits = _pick(rng, DIGITS, (n + 1) // 2)
    ops = _pick(rng, OPS, n // 2)
    out = [digits[0]]
    for op, d in zip(ops, digits[1:]):
        out += [op, d]
    return out


def _sample_stack(n, rng):
    k = int(rng.integers(0, n + 1))
    return _pick(rng, BITS, k) + _pick(rng, ACTIONS, n - k)


def _sample_missing(n, rng):
    w = _pick(rng, BITS, n // 2)
    full = w + w
    full[int(rng.integers(0, n))] = MASK
    return full


TASKS: dict[str, TaskSpec] = {t.name: t for t in [
    TaskSpec("even-pairs", "R", BITS, BITS, lambda n, r: _pick(r, BITS, n), even_pairs),
    TaskSpec("parity-check", "R", BITS, BITS, lambda n, r: _pick(r, BITS, n), parity_check),
    TaskSpec("cycle-navigation", "R", MOVES, DIGITS, lambda n, r: _pick(r, MOVES, n), cycle_navigation),
    TaskSpec("modular-arithmetic", "R", DIGITS + OPS, DIGITS, _sample_arith, modular_arithmetic,
             valid=lambda n: n >= 1 and n % 2 == 1),
    TaskSpec("reverse-string", "DCF", BITS, BITS, lambda n, r: _pick(r, BITS, n), reverse_string,
             out_len=lambda n: n),
    TaskSpec("stack-manipulation", "DCF", BITS + ACTIONS, BITS + (EMPTY,), _sample_stack,
             stack_manipulation, out_len=lambda n: n),
    TaskSpec("missing-duplicate", "CS", BITS + (MASK,), BITS, _sample_missing, missing_duplicate,
             valid=lambda n: n >= 2 and n % 2 == 0),
    TaskSpec("duplicate-string", "CS", BITS, BITS, lambda n, r: _pick(r, BITS, n), duplicate_string,
             out_len=lambda n: 2 * n),
    TaskSpec("bucket-sort", "CS", DIGITS, DIGITS, lambda n, r: _pick(r, DIGITS, n), bucket_sort,
             out_len=lambda n: n),
]}


ALIASES = {"parity": "parity-check", "cycle-nav": "cycle-navigation",
           "modular-arithmetic-simple": "modular-arithmetic"}


def get_task(name: str) -> TaskSpec:
    try:
        return TASKS[ALIASES.get(name, name)]
    except KeyError:
        raise ValueError(f"unknown task {name!r}; choose from {sorted(TASKS)}") from None


def make_sample(task: TaskSpec, tokens: Sequence[str]) -> TaskSample:
    """Label a raw task input and lay it out with PAD slots and mask."""
    tokens = list(tokens)
    target = task.oracle(tokens)
    if task.out_len is None:
        return TaskSample(tokens, target, [False] * (len(tokens) - 1) + [True])
    m = task.out_len(len(tokens))
    return TaskSample(tokens + [PAD] * m, target, [False] * len(tokens) + [True] * m)


def generate(task: TaskSpec | str, n: int, rng: np.random.Generator) -> TaskSample:
    task = get_task(task) if isinstance(task, str) else task
    if not task.valid(n):
        raise ValueError(f"{task.name}: invalid input length {n}")
    return make_sample(task, task.sample(n, rng))


def generate_batch(task: TaskSpec, n: int, size: int, rng: np.random.Generator) -> list[TaskSample]:
    return [generate(task, n, rng) for _ in range(size)]


def sample_rng(seed: int, n: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, length, sample index)."""
    return np.random.default_rng([seed, n, index])


# --- encoding --------------------------------------------------------------


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        self.tokens = tuple(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate vocabulary entries")

    def __len__(self) -> int:
        return len(self.tokens)

    def ids(self, tokens: Sequence[str]) -> list[int]:
        try:
            return [self.index[t] for t in tokens]
        except KeyError as exc:
            raise ValueError(f"unknown token {exc.args[0]!r}") from None


def encode(samples: Sequence[TaskSample], vocab: Sequence[str] | Vocab) -> np.ndarray:
    """One-hot (N, T, |vocab|) for samples of a common length."""
    vocab = vocab if isinstance(vocab, Vocab) else Vocab(vocab)
    if len({len(s.input) for s in samples}) != 1:
        raise ValueError("samples must share one length")
    ids = np.array([vocab.ids(s.input) for s in samples])
    return np.eye(len(vocab), dtype=np.float32)[ids]


def decode(onehot: np.ndarray, vocab: Sequence[str] | Vocab) -> list[list[str]]:
    vocab = vocab if isinstance(vocab, Vocab) else Vocab(vocab)
    return [[vocab.tokens[i] for i in row] for row in np.asarray(onehot).argmax(axis=-1)]


@dataclass
class Batch:
    x: np.ndarray        # (N, T, d_x)
    targets: np.ndarray  # (N, n_out) output-vocab indices
    mask: np.ndarray     # (T,)


def encode_batch(task: TaskSpec, samples: Sequence[TaskSample]) -> Batch:
    masks = {tuple(s.mask) for s in samples}
    if len(masks) != 1:
        raise ValueError("samples in a batch must share one output mask")
    out_vocab = Vocab(task.output_vocab)
    return Batch(encode(samples, task.input_vocab),
                 np.array([out_vocab.ids(s.target) for s in samples], dtype=np.int64),
                 np.array(masks.pop(), dtype=bool))


def to_record(task: TaskSpec, sample: TaskSample, seed: int) -> dict:
    return {"task": task.name, "input": sample.input, "target": sample.target,
            "mask": [int(m) for m in sample.mask], "seed": seed}
