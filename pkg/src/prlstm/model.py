"""PR-LSTM, its PR-RNN ablation, and the sequential LSTM/RNN baselines.

Parameters live in a flat ``dict[str, Tensor]`` keyed by canonical names
(``embed.W_io``, ``comp.W_g2``, ``refine.0.W_g1``, ``head.W`` ...), which is
also the checkpoint layout. Weight matrices are stored ``(out, in)``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import scan
from .tensor import (ShapeError, Tensor, active_tape, affine, add, concat_last, mul, relu,
                     sigmoid, softmax_cross_entropy, split_last, split_rows, stack_rows, tanh)

VARIANTS = ("pr-lstm", "pr-rnn", "seq-lstm", "seq-rnn")
Params = dict[str, Tensor]


@dataclass
class ModelConfig:
    d_h: int = 64
    d_x: int = 3
    R: int = 1
    variant: str = "pr-lstm"
    K_out: int = 2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.d_h < 1 or self.d_x < 1 or self.K_out < 1 or self.R < 0:
            raise ValueError(f"invalid model config {asdict(self)}")

    @property
    def recursive(self) -> bool:
        return self.variant.startswith("pr-")


@dataclass
class LatentState:
    h: Tensor
    c: Tensor | None = None


@dataclass
class EmbedParams:
    W_io: Tensor
    b_io: Tensor
    W_u: Tensor
    b_u: Tensor


@dataclass
class CompositionParams:
    W_g2: Tensor
    b_g2: Tensor
    W_u2: Tensor
    b_u2: Tensor


@dataclass
class RefineParams:
    W_g1: Tensor
    b_g1: Tensor
    W_u1: Tensor
    b_u1: Tensor


def _view(cls, params: Params, prefix: str):
    return cls(**{f: params[f"{prefix}.{f}"] for f in cls.__dataclass_fields__})


# --- parameter layout -----------------------------------------------------


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, dx, K = cfg.d_h, cfg.d_x, cfg.K_out
    shapes: dict[str, tuple[int, ...]] = {}
    if cfg.recursive:
        shapes.update({"embed.W_io": (2 * d, dx), "embed.b_io": (2 * d,),
                       "embed.W_u": (d, dx), "embed.b_u": (d,)})
    if cfg.variant == "pr-lstm":
        shapes.update({"comp.W_g2": (4 * d, 2 * d), "comp.b_g2": (4 * d,),
                       "comp.W_u2": (d, 2 * d), "comp.b_u2": (d,)})
        for r in range(cfg.R):
            shapes.update({f"refine.{r}.W_g1": (3 * d, d), f"refine.{r}.b_g1": (3 * d,),
                           f"refine.{r}.W_u1": (d, d), f"refine.{r}.b_u1": (d,)})
    elif cfg.variant == "pr-rnn":
        shapes.update({"comp.W": (d, 2 * d), "comp.b": (d,)})
        for r in range(cfg.R):
            shapes.update({f"refine.{r}.W": (d, d), f"refine.{r}.b": (d,)})
    elif cfg.variant == "seq-lstm":
        shapes.update({"lstm.W": (4 * d, dx + d), "lstm.b": (4 * d,)})
    else:
        shapes.update({"rnn.W": (d, dx + d), "rnn.b": (d,)})
    shapes.update({"head.W": (K, d), "head.b": (K,)})
    return shapes


def init_params(cfg: ModelConfig, seed: int | np.random.Generator = 0, dtype=np.float32) -> Params:
    """Glorot-uniform weights, zero biases, no forget-gate offset."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params: Params = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 2:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-limit, limit, size=shape)
        else:
            arr = np.zeros(shape)
        params[name] = Tensor(arr, requires_grad=True, dtype=dtype)
    return params


def _part(name: str) -> str:
    head = name.split(".")[0]
    return {"comp": "encoder", "refine": "encoder", "lstm": "encoder", "rnn": "encoder"}.get(head, head)


def count_params(cfg: ModelConfig) -> dict[str, tuple[int, int]]:
    """Closed-form ``(weights, biases)`` per part: ``embed``, ``encoder``, ``head``."""
    d, dx, K, R = cfg.d_h, cfg.d_x, cfg.K_out, cfg.R
    embed = (3 * d * dx, 3 * d) if cfg.recursive else (0, 0)
    encoder = {
        "pr-lstm": (10 * d * d + 4 * d * d * R, 5 * d + 4 * d * R),
        "pr-rnn": (2 * d * d + d * d * R, d + d * R),
        "seq-lstm": (4 * d * (d + dx), 4 * d),
        "seq-rnn": (d * (d + dx), d),
    }[cfg.variant]
    return {"embed": embed, "encoder": encoder, "head": (K * d, K)}


def enumerate_params(params: Params) -> dict[str, tuple[int, int]]:
    """``count_params``-shaped tally taken from the stored tensors themselves."""
    out = {"embed": [0, 0], "encoder": [0, 0], "head": [0, 0]}
    for name, t in params.items():
        out[_part(name)][0 if t.data.ndim == 2 else 1] += t.data.size
    return {k: (w, b) for k, (w, b) in out.items()}


def param_matched_hidden(base: int = 256, ours: int = 14, theirs: int = 4) -> int:
    """Hidden size giving ``ours`` d×d matrices the budget of ``theirs`` at ``base``."""
    return round(base / math.sqrt(ours / theirs))


# --- encoder boxes ---------------------------------------------------------


def _check(op: str, *ts: Tensor) -> None:
    if len({t.shape for t in ts}) != 1:
        raise ShapeError(f"{op}: dimension mismatch {[t.shape for t in ts]}")


def two_state_gates(h_left: Tensor, h_right: Tensor, p: CompositionParams):
    _check("two_state_gates", h_left, h_right)
    d = h_left.shape[-1]
    hh = concat_last(h_left, h_right)
    f1, f2, i, o = split_last(sigmoid(affine(hh, p.W_g2, p.b_g2)), [d] * 4)
    u = tanh(affine(hh, p.W_u2, p.b_u2))
    return f1, f2, i, o, u


def one_state_gates(h: Tensor, p: RefineParams):
    d = h.shape[-1]
    f1, i, o = split_last(sigmoid(affine(h, p.W_g1, p.b_g1)), [d] * 3)
    u = tanh(affine(h, p.W_u1, p.b_u1))
    return f1, i, o, u


def forget_add_activate(gated: Sequence[tuple[Tensor, Tensor]], i: Tensor, u: Tensor, o: Tensor) -> LatentState:
    _check("forget_add_activate", i, u, o, *(t for pair in gated for t in pair))
    c = mul(i, u)
    for f, cj in gated:
        c = add(c, mul(f, cj))
    return LatentState(mul(o, tanh(c)), c)


def state_embed(x: Tensor, p: EmbedParams) -> LatentState:
    if x.shape[-1] != p.W_u.shape[1]:
        raise ShapeError(f"state_embed: input width {x.shape[-1]} != {p.W_u.shape[1]}")
    d = p.W_u.shape[0]
    i, o = split_last(sigmoid(affine(x, p.W_io, p.b_io)), [d, d])
    u = tanh(affine(x, p.W_u, p.b_u))
    c = mul(i, u)
    return LatentState(mul(o, tanh(c)), c)


def compose(left: LatentState, right: LatentState, comp: CompositionParams,
            refines: Sequence[RefineParams] = ()) -> LatentState:
    """Binary composition followed by one refinement stage per entry of ``refines``."""
    f1, f2, i, o, u = two_state_gates(left.h, right.h, comp)
    state = forget_add_activate([(f1, left.c), (f2, right.c)], i, u, o)
    for p in refines:
        f, i, o, u = one_state_gates(state.h, p)
        state = forget_add_activate([(f, state.c)], i, u, o)
    return state


def fc_compose(h_left: Tensor, h_right: Tensor, W: Tensor, b: Tensor) -> Tensor:
    _check("fc_compose", h_left, h_right)
    return relu(affine(concat_last(h_left, h_right), W, b))


def fc_refine(h: Tensor, W: Tensor, b: Tensor) -> Tensor:
    return relu(affine(h, W, b))


# --- whole-sequence forward -----------------------------------------------


def _as_input(x) -> np.ndarray:
    x = x.data if isinstance(x, Tensor) else np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"expected (batch, T, d_x) input, got shape {x.shape}")
    if x.shape[1] < 1:
        raise ValueError("empty sequence")
    return x


class Combiner:
    """Batched node combiner for one recursive variant, shared across all tree nodes."""

    def __init__(self, cfg: ModelConfig, params: Params):
        self.cfg = cfg
        if cfg.variant == "pr-lstm":
            self.comp = _view(CompositionParams, params, "comp")
            self.refines = [_view(RefineParams, params, f"refine.{r}") for r in range(cfg.R)]
        else:
            self.W, self.b = params["comp.W"], params["comp.b"]
            self.refines = [(params[f"refine.{r}.W"], params[f"refine.{r}.b"]) for r in range(cfg.R)]

    def __call__(self, left: LatentState, right: LatentState) -> LatentState:
        if self.cfg.variant == "pr-lstm":
            return compose(left, right, self.comp, self.refines)
        h = fc_compose(left.h, right.h, self.W, self.b)
        for W, b in self.refines:
            h = fc_refine(h, W, b)
        return LatentState(h)

    def level(self, lefts: list[LatentState], rights: list[LatentState]) -> list[LatentState]:
        n = len(lefts)
        if n == 1:
            return [self(lefts[0], rights[0])]
        lstm = self.cfg.variant == "pr-lstm"
        left = LatentState(stack_rows([s.h for s in lefts]),
                           stack_rows([s.c for s in lefts]) if lstm else None)
        right = LatentState(stack_rows([s.h for s in rights]),
                            stack_rows([s.c for s in rights]) if lstm else None)
        out = self(left, right)
        hs = split_rows(out.h, n)
        cs = split_rows(out.c, n) if lstm else [None] * n
        return [LatentState(h, c) for h, c in zip(hs, cs)]


def embed_leaves(x: np.ndarray, cfg: ModelConfig, params: Params) -> list[LatentState]:
    """Per-token leaf states; ``x`` is (B, T, d_x)."""
    B, T, dx = x.shape
    flat = Tensor(np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(T * B, dx), dtype=params["head.W"].dtype)
    leaf = state_embed(flat, _view(EmbedParams, params, "embed"))
    hs = split_rows(leaf.h, T) if T > 1 else [leaf.h]
    if cfg.variant == "pr-rnn":
        return [LatentState(h) for h in hs]
    cs = split_rows(leaf.c, T) if T > 1 else [leaf.c]
    return [LatentState(h, c) for h, c in zip(hs, cs)]


# inference splits wide levels into blocks of at most this many rows (steps x batch)
CHUNK_ROWS = 1 << 15


def _chunked_level(combiner: Combiner, batch: int, pool: ThreadPoolExecutor | None):
    per_chunk = max(1, CHUNK_ROWS // batch)

    def run(lefts, rights):
        n = len(lefts)
        if n <= per_chunk:
            return combiner.level(lefts, rights)
        chunks = [(lefts[a:a + per_chunk], rights[a:a + per_chunk]) for a in range(0, n, per_chunk)]
        parts = pool.map(lambda lr: combiner.level(*lr), chunks) if pool else \
            (combiner.level(*lr) for lr in chunks)
        return [s for part in parts for s in part]
    return run


def forward(x, cfg: ModelConfig, params: Params, positions: Sequence[int] | None = None,
            workers: int = 1) -> list[LatentState]:
    """Prefix states at ``positions`` (default: every position).

    ``x`` is a one-hot (B, T, d_x) array. Recursive variants run the balanced
    scan plan restricted to the steps the requested positions depend on.
    ``workers > 1`` splits each level across a thread pool and is only
    allowed outside a tape.
    """
    x = _as_input(x)
    T = x.shape[1]
    if x.shape[2] != cfg.d_x:
        raise ShapeError(f"input width {x.shape[2]} != d_x={cfg.d_x}")
    positions = list(range(T)) if positions is None else list(positions)
    if any(not 0 <= p < T for p in positions):
        raise ValueError(f"positions outside sequence of length {T}")
    if workers > 1 and active_tape() is not None:
        raise RuntimeError("multi-worker forward is inference-only")
    if not cfg.recursive:
        states = forward_sequential(x, cfg, params, workers=workers)
        return [states[p] for p in positions]

    plan = scan.build_plan(T)
    if positions != list(range(T)):
        plan = scan.restrict(plan, positions)
    leaves = embed_leaves(x, cfg, params)
    combiner = Combiner(cfg, params)
    if active_tape() is not None:
        buf = scan.execute_levels(plan, leaves, combiner.level)
    elif workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            buf = scan.execute_levels(plan, leaves, _chunked_level(combiner, x.shape[0], pool))
    else:
        buf = scan.execute_levels(plan, leaves, _chunked_level(combiner, x.shape[0], None))
    return [buf[p] for p in positions]


def forward_sequential(x, cfg: ModelConfig, params: Params, workers: int = 1) -> list[LatentState]:
    """Left-to-right LSTM (gate order i, f, g, o) or tanh-RNN; depth equals T."""
    x = _as_input(x)
    B = x.shape[0]
    if workers > 1 and B > 1:
        bounds = np.linspace(0, B, min(workers, B) + 1).astype(int)
        with ThreadPoolExecutor(workers) as pool:
            shards = list(pool.map(lambda ab: forward_sequential(x[ab[0]:ab[1]], cfg, params),
                                   zip(bounds[:-1], bounds[1:])))
        return [LatentState(Tensor(np.concatenate([s[t].h.data for s in shards]), dtype=shards[0][t].h.dtype))
                for t in range(x.shape[1])]

    dtype = params["head.W"].dtype
    d = cfg.d_h
    h = Tensor(np.zeros((B, d)), dtype=dtype)
    c = Tensor(np.zeros((B, d)), dtype=dtype)
    out = []
    for t in range(x.shape[1]):
        xt = Tensor(x[:, t, :], dtype=dtype)
        if cfg.variant == "seq-lstm":
            z = affine(concat_last(xt, h), params["lstm.W"], params["lstm.b"])
            zi, zf, zg, zo = split_last(z, [d] * 4)
            c = add(mul(sigmoid(zf), c), mul(sigmoid(zi), tanh(zg)))
            h = mul(sigmoid(zo), tanh(c))
            out.append(LatentState(h, c))
        elif cfg.variant == "seq-rnn":
            h = tanh(affine(concat_last(xt, h), params["rnn.W"], params["rnn.b"]))
            out.append(LatentState(h))
        else:
            raise ValueError(f"{cfg.variant} is not a sequential variant")
    return out


# --- heads -----------------------------------------------------------------


def classify(h: Tensor, params: Params) -> Tensor:
    return affine(h, params["head.W"], params["head.b"])


def per_position(states: Sequence[LatentState], params: Params) -> Tensor:
    """Logits for several positions, stacked position-major: row ``k*B + b``."""
    h = states[0].h if len(states) == 1 else stack_rows([s.h for s in states])
    return classify(h, params)


def output_positions(mask) -> list[int]:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 1 or not mask.any():
        raise ValueError("mask must be a non-empty 1-D boolean vector")
    return [int(i) for i in np.flatnonzero(mask)]


def logits(x, mask, cfg: ModelConfig, params: Params, workers: int = 1) -> Tensor:
    x = _as_input(x)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (x.shape[1],):
        raise ValueError(f"mask length {mask.shape} does not match sequence length {x.shape[1]}")
    pos = output_positions(mask)
    return per_position(forward(x, cfg, params, pos, workers=workers), params)


def loss(x, targets, mask, cfg: ModelConfig, params: Params) -> Tensor:
    """Mean cross-entropy over all masked positions; ``targets`` is (B, n_out)."""
    z = logits(x, mask, cfg, params)
    labels = np.asarray(targets).T.reshape(-1)
    return softmax_cross_entropy(z, labels)


def predict(x, mask, cfg: ModelConfig, params: Params, workers: int = 1) -> np.ndarray:
    """Argmax class per masked position, shape (B, n_out); ties go to the lowest index."""
    B = np.asarray(x).shape[0] if not isinstance(x, Tensor) else x.shape[0]
    z = logits(x, mask, cfg, params, workers=workers).data
    return z.argmax(axis=1).reshape(-1, B).T
