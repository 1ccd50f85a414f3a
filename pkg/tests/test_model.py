import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import central_difference, max_rel_error, reference_scan
from prlstm import model as M
from prlstm.model import (CompositionParams, EmbedParams, LatentState, ModelConfig, RefineParams,
                          compose, count_params, enumerate_params, fc_compose, fc_refine,
                          forget_add_activate, init_params, one_state_gates, param_matched_hidden,
                          state_embed, two_state_gates)
from prlstm.scan import build_plan, execute_prefix
from prlstm.tensor import ShapeError, Tape, Tensor, add, backward, mul, total


def T64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad, dtype=np.float64)


def sig(z):
    return 1 / (1 + math.exp(-z))


def mv(W, v):
    return [sum(w * x for w, x in zip(row, v)) for row in W]


def comp_params(d, W_g2=None, b_g2=None, W_u2=None, b_u2=None):
    return CompositionParams(T64(np.zeros((4 * d, 2 * d)) if W_g2 is None else W_g2),
                             T64(np.zeros(4 * d) if b_g2 is None else b_g2),
                             T64(np.zeros((d, 2 * d)) if W_u2 is None else W_u2),
                             T64(np.zeros(d) if b_u2 is None else b_u2))


def refine_params(d, b_g1=None):
    return RefineParams(T64(np.zeros((3 * d, d))), T64(np.zeros(3 * d) if b_g1 is None else b_g1),
                        T64(np.zeros((d, d))), T64(np.zeros(d)))


def random_params(cfg, seed, bias=0.5):
    """64-bit Glorot weights with non-zero biases so every path is exercised."""
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng, dtype=np.float64)
    for t in params.values():
        if t.data.ndim == 1:
            t.data[:] = rng.uniform(-bias, bias, t.data.shape)
    return params


def one_hot(tokens, dx):
    return np.eye(dx)[np.asarray(tokens)]


def np_params(params):
    return {k: v.data.astype(np.float64).tolist() for k, v in params.items()}


# --- scalar oracle for a whole PR-LSTM ----------------------------------


def oracle_embed(x, P):
    d = len(P["embed.b_u"])
    io = [sig(z + b) for z, b in zip(mv(P["embed.W_io"], x), P["embed.b_io"])]
    u = [math.tanh(z + b) for z, b in zip(mv(P["embed.W_u"], x), P["embed.b_u"])]
    c = [io[j] * u[j] for j in range(d)]
    return [io[d + j] * math.tanh(c[j]) for j in range(d)], c


def oracle_compose(left, right, P, R):
    (hl, cl), (hr, cr) = left, right
    d = len(hl)
    g = [sig(z + b) for z, b in zip(mv(P["comp.W_g2"], hl + hr), P["comp.b_g2"])]
    u = [math.tanh(z + b) for z, b in zip(mv(P["comp.W_u2"], hl + hr), P["comp.b_u2"])]
    c = [g[2 * d + j] * u[j] + g[j] * cl[j] + g[d + j] * cr[j] for j in range(d)]
    h = [g[3 * d + j] * math.tanh(c[j]) for j in range(d)]
    for r in range(R):
        g = [sig(z + b) for z, b in zip(mv(P[f"refine.{r}.W_g1"], h), P[f"refine.{r}.b_g1"])]
        u = [math.tanh(z + b) for z, b in zip(mv(P[f"refine.{r}.W_u1"], h), P[f"refine.{r}.b_u1"])]
        c = [g[d + j] * u[j] + g[j] * c[j] for j in range(d)]
        h = [g[2 * d + j] * math.tanh(c[j]) for j in range(d)]
    return h, c


def oracle_forward(tokens_onehot, P, R):
    leaves = [oracle_embed(list(x), P) for x in tokens_onehot]
    return reference_scan(leaves, lambda a, b: oracle_compose(a, b, P, R))


# --- gate boxes --------------------------------------------------------


def test_two_state_gates_zero_params():
    f1, f2, i, o, u = two_state_gates(T64([[0.3, -1.0]]), T64([[2.0, 0.1]]), comp_params(2))
    for g in (f1, f2, i, o):
        assert np.all(g.data == 0.5)
    assert np.all(u.data == 0.0)


def test_two_state_gates_bias_example():
    gates = two_state_gates(T64([[0.7]]), T64([[-3.0]]), comp_params(1, b_g2=[2, -2, 0, 0]))
    got = [float(g.data[0, 0]) for g in gates[:4]]
    assert got == pytest.approx([0.8808, 0.1192, 0.5, 0.5], abs=5e-5)


def test_two_state_gates_block_order():
    d = 3
    W = np.zeros((4 * d, 2 * d))
    W[:d] = 1.0  # f1 rows only
    base = two_state_gates(T64(np.ones((1, d))), T64(np.ones((1, d))), comp_params(d))
    moved = two_state_gates(T64(np.ones((1, d))), T64(np.ones((1, d))), comp_params(d, W_g2=W))
    changed = [not np.array_equal(a.data, b.data) for a, b in zip(base, moved)]
    assert changed == [True, False, False, False, False]


def test_two_state_gates_rejects_mismatch():
    with pytest.raises(ShapeError):
        two_state_gates(T64([[1.0]]), T64([[1.0, 2.0]]), comp_params(1))


def test_forget_add_activate_examples():
    one, zero = T64([[1.0]]), T64([[0.0]])
    c1, o = T64([[0.6]]), T64([[0.3]])
    s = forget_add_activate([(one, c1), (zero, T64([[5.0]]))], zero, T64([[9.0]]), o)
    assert s.c.data[0, 0] == 0.6 and s.h.data[0, 0] == pytest.approx(0.3 * math.tanh(0.6))
    s = forget_add_activate([(zero, c1), (zero, c1)], one, T64([[0.25]]), one)
    assert s.c.data[0, 0] == 0.25
    half = T64([[0.5]])
    s = forget_add_activate([(half, T64([[2.0]])), (half, T64([[-2.0]]))], half, T64([[0.8]]), one)
    assert s.c.data[0, 0] == pytest.approx(0.4)
    assert s.h.data[0, 0] == pytest.approx(0.3799, abs=5e-5)
    with pytest.raises(ShapeError):
        forget_add_activate([(half, T64([[1.0, 2.0]]))], half, half, half)


def test_one_state_gates_examples():
    f, i, o, u = one_state_gates(T64([[0.4, -0.2]]), refine_params(2))
    assert [float(g.data[0, 0]) for g in (f, i, o, u)] == [0.5, 0.5, 0.5, 0.0]
    _, _, o, _ = one_state_gates(T64([[0.4]]), refine_params(1, b_g1=[0, 0, 4]))
    assert o.data[0, 0] == pytest.approx(0.9820, abs=5e-5)


def test_one_state_gates_block_order():
    d = 2
    p = refine_params(d)
    base = one_state_gates(T64(np.ones((1, d))), p)
    p.W_g1.data[2 * d:] = 1.0
    moved = one_state_gates(T64(np.ones((1, d))), p)
    assert [not np.array_equal(a.data, b.data) for a, b in zip(base, moved)] == [False, False, True, False]


def test_state_embed_examples():
    zero = EmbedParams(T64(np.zeros((4, 3))), T64(np.zeros(4)), T64(np.zeros((2, 3))), T64(np.zeros(2)))
    s = state_embed(T64([[0.0, 1.0, 0.0]]), zero)
    assert np.all(s.c.data == 0) and np.all(s.h.data == 0)

    p = EmbedParams(T64([[0.0], [0.0]]), T64([0.0, 0.0]), T64([[1.0]]), T64([0.0]))
    s = state_embed(T64([[1.0]]), p)
    assert s.c.data[0, 0] == pytest.approx(0.3808, abs=5e-5)
    assert s.h.data[0, 0] == pytest.approx(0.1817, abs=5e-5)
    with pytest.raises(ShapeError):
        state_embed(T64([[1.0, 0.0]]), p)


def test_embedding_is_position_independent():
    cfg = ModelConfig(d_h=4, d_x=3)
    params = init_params(cfg, 0)
    leaves = M.embed_leaves(one_hot([[2, 0, 2, 1, 2]], 3), cfg, params)
    assert np.array_equal(leaves[0].h.data, leaves[2].h.data)
    assert np.array_equal(leaves[0].c.data, leaves[4].c.data)


# --- composition --------------------------------------------------------


def test_compose_with_zero_params():
    left = LatentState(T64([[0.2, -0.4]]), T64([[1.0, 3.0]]))
    right = LatentState(T64([[0.9, 0.1]]), T64([[-1.0, 0.5]]))
    s = compose(left, right, comp_params(2))
    np.testing.assert_allclose(s.c.data, [[0.0, 1.75]])
    np.testing.assert_allclose(s.h.data, 0.5 * np.tanh([[0.0, 1.75]]))
    assert s.h.data[0, 0] == 0.0


@pytest.mark.parametrize("R", [0, 1, 2])
def test_compose_matches_scalar_oracle(R):
    cfg = ModelConfig(d_h=1, d_x=1, R=R)
    params = random_params(cfg, 11 + R)
    P = np_params(params)
    comb = M.Combiner(cfg, params)
    left, right = ([0.3], [-1.2]), ([-0.6], [0.8])
    got = comb(LatentState(T64([left[0]]), T64([left[1]])), LatentState(T64([right[0]]), T64([right[1]])))
    h, c = oracle_compose(left, right, P, R)
    assert got.h.data[0, 0] == pytest.approx(h[0], abs=1e-12)
    assert got.c.data[0, 0] == pytest.approx(c[0], abs=1e-12)


def test_compose_r0_is_composition_only():
    cfg1, cfg0 = ModelConfig(d_h=3, R=1), ModelConfig(d_h=3, R=0)
    p1 = random_params(cfg1, 5)
    p0 = {k: v for k, v in p1.items() if not k.startswith("refine")}
    a = LatentState(T64(np.full((1, 3), 0.2)), T64(np.full((1, 3), -0.3)))
    b = LatentState(T64(np.full((1, 3), 0.5)), T64(np.full((1, 3), 0.1)))
    base = M.Combiner(cfg0, p0)(a, b)
    f1, f2, i, o, u = two_state_gates(a.h, b.h, M._view(CompositionParams, p1, "comp"))
    np.testing.assert_allclose(base.c.data, (i.data * u.data + f1.data * a.c.data + f2.data * b.c.data))
    assert not np.allclose(M.Combiner(cfg1, p1)(a, b).h.data, base.h.data)


def test_compose_is_not_commutative():
    rng = np.random.default_rng(3)
    for seed in range(20):
        cfg = ModelConfig(d_h=4, R=1)
        comb = M.Combiner(cfg, random_params(cfg, seed))
        a = LatentState(T64(rng.uniform(-1, 1, (1, 4))), T64(rng.uniform(-1, 1, (1, 4))))
        b = LatentState(T64(rng.uniform(-1, 1, (1, 4))), T64(rng.uniform(-1, 1, (1, 4))))
        assert not np.allclose(comb(a, b).h.data, comb(b, a).h.data)


def test_fc_blocks():
    W, b = T64(np.zeros((2, 4))), T64(np.zeros(2))
    assert np.all(fc_compose(T64([[1.0, 2.0]]), T64([[3.0, 4.0]]), W, b).data == 0)
    out = fc_refine(T64([[1.0, -1.0]]), T64([[1.0, 0.0], [0.0, 1.0]]), T64([0.0, 0.0]))
    assert out.data.tolist() == [[1.0, 0.0]]
    rng = np.random.default_rng(4)
    w, bb, w2, b2 = rng.normal(size=2), rng.normal(), rng.normal(), rng.normal()
    hl, hr = 0.7, -0.2
    expected = max(0.0, w2 * max(0.0, w[0] * hl + w[1] * hr + bb) + b2)
    got = fc_refine(fc_compose(T64([[hl]]), T64([[hr]]), T64([w]), T64([bb])), T64([[w2]]), T64([b2]))
    assert got.data[0, 0] == pytest.approx(expected, abs=1e-12)


# --- whole-sequence forward -------------------------------------------


def test_forward_single_token_is_leaf():
    cfg = ModelConfig(d_h=4)
    params = init_params(cfg, 1)
    x = one_hot([[1]], 3)
    (state,) = M.forward(x, cfg, params)
    (leaf,) = M.embed_leaves(x, cfg, params)
    assert np.array_equal(state.h.data, leaf.h.data)


@pytest.mark.parametrize("R", [0, 1, 2])
def test_forward_matches_tree_walk_oracle(R):
    cfg = ModelConfig(d_h=2, d_x=3, R=R)
    params = random_params(cfg, 42)
    tokens = [0, 2, 1, 1]
    states = M.forward(one_hot([tokens], 3), cfg, params)
    expected = oracle_forward(one_hot(tokens, 3), np_params(params), R)
    for s, (h, c) in zip(states, expected):
        np.testing.assert_allclose(s.h.data[0], h, atol=1e-6)
        np.testing.assert_allclose(s.c.data[0], c, atol=1e-6)


def test_forward_float32_close_to_oracle():
    cfg = ModelConfig(d_h=2, d_x=3, R=1)
    params = init_params(cfg, 42)
    tokens = [2, 0, 1, 2]
    states = M.forward(one_hot([tokens], 3), cfg, params)
    expected = oracle_forward(one_hot(tokens, 3), np_params(params), 1)
    for s, (h, _) in zip(states, expected):
        np.testing.assert_allclose(s.h.data[0], h, atol=1e-6)


@given(st.integers(1, 24), st.data())
def test_prefix_causality(T, data):
    cfg = ModelConfig(d_h=3, R=1)
    params = init_params(cfg, 9)
    tokens = data.draw(st.lists(st.integers(0, 2), min_size=T, max_size=T))
    t = data.draw(st.integers(0, T - 1))
    changed = list(tokens)
    changed[t] = (changed[t] + 1) % 3
    a = M.forward(one_hot([tokens], 3), cfg, params)
    b = M.forward(one_hot([changed], 3), cfg, params)
    for k in range(t):
        assert a[k].h.data.tobytes() == b[k].h.data.tobytes()
    assert not np.array_equal(a[t].h.data, b[t].h.data)


@given(st.integers(1, 16), st.integers(0, 2**31 - 1), st.floats(0.5, 3.0))
def test_hidden_state_strictly_bounded(T, seed, scale):
    cfg = ModelConfig(d_h=3, R=1)
    rng = np.random.default_rng(seed)
    params = {k: Tensor(rng.uniform(-scale, scale, v.shape), dtype=np.float64)
              for k, v in init_params(cfg, 0).items()}
    x = one_hot(rng.integers(0, 3, (2, T)), 3)
    for s in M.forward(x, cfg, params):
        assert np.all(np.abs(s.h.data) < 1)


def test_positions_subset_matches_full():
    cfg = ModelConfig(d_h=4)
    params = init_params(cfg, 2)
    x = one_hot(np.random.default_rng(0).integers(0, 3, (3, 11)), 3)
    full = M.forward(x, cfg, params)
    part = M.forward(x, cfg, params, positions=[10, 4])
    assert np.array_equal(part[0].h.data, full[10].h.data)
    assert np.array_equal(part[1].h.data, full[4].h.data)


def test_forward_workers_match_single_thread(monkeypatch):
    monkeypatch.setattr(M, "CHUNK_ROWS", 8)
    cfg = ModelConfig(d_h=4)
    params = init_params(cfg, 2)
    x = one_hot(np.random.default_rng(1).integers(0, 3, (4, 37)), 3)
    one = M.forward(x, cfg, params)
    many = M.forward(x, cfg, params, workers=3)
    for a, b in zip(one, many):
        assert np.array_equal(a.h.data, b.h.data)
    with Tape():
        with pytest.raises(RuntimeError):
            M.forward(x, cfg, params, workers=2)


def test_forward_rejects_bad_input():
    cfg = ModelConfig(d_h=2)
    params = init_params(cfg, 0)
    with pytest.raises(ValueError):
        M.forward(np.zeros((1, 0, 3)), cfg, params)
    with pytest.raises(ShapeError):
        M.forward(np.zeros((1, 2, 4)), cfg, params)
    with pytest.raises(ValueError):
        M.forward(np.zeros((1, 2, 3)), cfg, params, positions=[2])


def test_pr_rnn_forward_matches_tree_walk():
    cfg = ModelConfig(d_h=2, R=1, variant="pr-rnn")
    params = random_params(cfg, 8)
    P = np_params(params)
    tokens = [1, 0, 2, 2, 1]

    def relu_aff(W, b, v):
        return [max(0.0, z + bb) for z, bb in zip(mv(W, v), b)]

    leaves = [oracle_embed(list(x), P)[0] for x in one_hot(tokens, 3)]
    expected = reference_scan(leaves, lambda a, b: relu_aff(P["refine.0.W"], P["refine.0.b"],
                                                            relu_aff(P["comp.W"], P["comp.b"], a + b)))
    got = M.forward(one_hot([tokens], 3), cfg, params)
    for s, h in zip(got, expected):
        np.testing.assert_allclose(s.h.data[0], h, atol=1e-12)
        assert s.c is None


# --- sequential baselines ---------------------------------------------


@pytest.mark.parametrize("variant", ["seq-lstm", "seq-rnn"])
def test_sequential_zero_params(variant):
    cfg = ModelConfig(d_h=3, variant=variant)
    params = {k: Tensor(np.zeros(v.shape)) for k, v in init_params(cfg, 0).items()}
    for s in M.forward_sequential(one_hot([[0, 1, 2, 1]], 3), cfg, params):
        assert np.all(s.h.data == 0)


def test_seq_lstm_scalar_recurrence():
    cfg = ModelConfig(d_h=1, d_x=1, variant="seq-lstm")
    params = random_params(cfg, 6)
    W, b = params["lstm.W"].data, params["lstm.b"].data
    xs = [1.0, 0.0, 1.0]
    h = c = 0.0
    expected = []
    for x in xs:
        zi, zf, zg, zo = (W[k, 0] * x + W[k, 1] * h + b[k] for k in range(4))
        c = sig(zf) * c + sig(zi) * math.tanh(zg)
        h = sig(zo) * math.tanh(c)
        expected.append(h)
    got = M.forward_sequential(np.array(xs).reshape(1, 3, 1), cfg, params)
    assert [s.h.data[0, 0] for s in got] == pytest.approx(expected, abs=1e-12)


def test_seq_rnn_scalar_recurrence():
    cfg = ModelConfig(d_h=1, d_x=1, variant="seq-rnn")
    params = random_params(cfg, 7)
    W, b = params["rnn.W"].data, params["rnn.b"].data
    h, expected = 0.0, []
    for x in (0.0, 1.0, 1.0):
        h = math.tanh(W[0, 0] * x + W[0, 1] * h + b[0])
        expected.append(h)
    got = M.forward_sequential(np.array([0.0, 1.0, 1.0]).reshape(1, 3, 1), cfg, params)
    assert [s.h.data[0, 0] for s in got] == pytest.approx(expected, abs=1e-12)


def test_sequential_sharding_matches():
    cfg = ModelConfig(d_h=4, variant="seq-lstm")
    params = init_params(cfg, 3)
    x = one_hot(np.random.default_rng(0).integers(0, 3, (7, 9)), 3)
    a = M.forward_sequential(x, cfg, params)
    b = M.forward_sequential(x, cfg, params, workers=3)
    for s, t in zip(a, b):
        assert np.array_equal(s.h.data, t.h.data)


# --- heads ---------------------------------------------------------------


def test_zero_head_gives_uniform_loss():
    cfg = ModelConfig(d_h=4, K_out=5)
    params = init_params(cfg, 0)
    params["head.W"].data[:] = 0
    x = one_hot([[0, 1, 2], [2, 2, 2]], 3)
    value = M.loss(x, np.array([[3], [1]]), [False, False, True], cfg, params).item()
    assert value == pytest.approx(math.log(5), abs=1e-6)


def test_head_matches_oracle():
    rng = np.random.default_rng(12)
    params = {"head.W": T64(rng.normal(size=(2, 3))), "head.b": T64(rng.normal(size=2))}
    h = rng.normal(size=3)
    got = M.classify(T64([h]), params).data[0]
    W, b = params["head.W"].data, params["head.b"].data
    expected = [sum(W[k, j] * h[j] for j in range(3)) + b[k] for k in range(2)]
    assert got.tolist() == pytest.approx(expected, abs=1e-12)


def test_argmax_ties_go_to_lowest_index():
    cfg = ModelConfig(d_h=2, K_out=3)
    params = init_params(cfg, 0)
    params["head.W"].data[:] = 0
    params["head.b"].data[:] = [0.0, 1.0, 1.0]
    pred = M.predict(one_hot([[0, 1], [1, 1]], 3), [True, True], cfg, params)
    assert pred.tolist() == [[1, 1], [1, 1]]


def test_per_position_layout_is_position_major():
    cfg = ModelConfig(d_h=3)
    params = init_params(cfg, 4)
    x = one_hot([[0, 1, 2, 0], [2, 1, 0, 0]], 3)
    mask = [False, True, False, True]
    z = M.logits(x, mask, cfg, params).data
    states = M.forward(x, cfg, params)
    np.testing.assert_array_equal(z[1], M.classify(states[1].h, params).data[1])
    np.testing.assert_array_equal(z[2], M.classify(states[3].h, params).data[0])
    with pytest.raises(ValueError):
        M.logits(x, [True, False], cfg, params)
    with pytest.raises(ValueError):
        M.output_positions([False, False])


# --- parameter counts ---------------------------------------------------


def test_count_params_examples():
    assert count_params(ModelConfig(d_h=256, R=1))["encoder"][0] == 14 * 256 ** 2 == 917504
    assert count_params(ModelConfig(d_h=1, R=0))["encoder"][0] == 10
    assert count_params(ModelConfig(d_h=5, d_x=2, variant="seq-lstm"))["encoder"] == (4 * 5 * 7, 20)


def test_param_matched_hidden():
    d = param_matched_hidden()
    assert d == 137
    target = 4 * 256 ** 2
    assert abs(14 * d * d - target) / target < 0.02


def test_count_params_matches_stored_tensors():
    for variant in M.VARIANTS:
        for d in range(1, 65):
            for R in (0, 1, 2):
                cfg = ModelConfig(d_h=d, d_x=4, R=R, variant=variant, K_out=3)
                assert enumerate_params(init_params(cfg, 0)) == count_params(cfg)


def test_canonical_names_and_distinct_refine_stages():
    cfg = ModelConfig(d_h=2, R=2)
    params = init_params(cfg, 0)
    assert {"embed.W_io", "comp.W_g2", "refine.0.W_g1", "refine.1.W_g1", "head.W"} <= set(params)
    assert not np.array_equal(params["refine.0.W_g1"].data, params["refine.1.W_g1"].data)
    limit = math.sqrt(6 / (8 + 4))
    assert np.all(np.abs(params["comp.W_g2"].data) <= limit)
    assert np.all(params["comp.b_g2"].data == 0)


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(variant="gru")
    with pytest.raises(ValueError):
        ModelConfig(R=-1)


# --- gradients ----------------------------------------------------------


def _fd_model_check(cfg, seed, T, mask_kind):
    params = random_params(cfg, seed)
    rng = np.random.default_rng(seed + 100)
    x = one_hot(rng.integers(0, cfg.d_x, (2, T)), cfg.d_x)
    mask = np.zeros(T, bool)
    if mask_kind == "last":
        mask[-1] = True
    else:
        mask[T // 2:] = True
    targets = rng.integers(0, cfg.K_out, (2, int(mask.sum())))
    plist = list(params.values())
    with Tape() as tape:
        loss = M.loss(x, targets, mask, cfg, params)
    backward(tape, loss, plist)

    def f():
        return M.loss(x, targets, mask, cfg, params).item()

    numeric = central_difference(f, [p.data for p in plist])
    return max_rel_error([p.grad for p in plist], numeric)


def test_gradient_full_model_t4():
    assert _fd_model_check(ModelConfig(d_h=3, d_x=3, R=1), 0, 4, "last") < 1e-4


@pytest.mark.parametrize("variant", M.VARIANTS)
@pytest.mark.parametrize("T,d,R,mask_kind", [(1, 2, 1, "last"), (3, 4, 2, "tail"), (6, 2, 0, "tail"),
                                             (5, 3, 1, "last")])
def test_gradient_matches_finite_differences(variant, T, d, R, mask_kind):
    cfg = ModelConfig(d_h=d, d_x=3, R=R, variant=variant, K_out=3)
    assert _fd_model_check(cfg, 7 * T + d, T, mask_kind) < 1e-4


def test_tied_gradient_is_sum_of_untied():
    cfg = ModelConfig(d_h=2, R=1)
    params = random_params(cfg, 21)
    x = one_hot([[0, 2, 1, 1]], 3)
    plan = build_plan(4)
    weights = T64(np.linspace(-1, 1, 8).reshape(4, 1, 2))

    def run(combine):
        with Tape() as tape:
            leaves = M.embed_leaves(x, cfg, params)
            out = execute_prefix(plan, leaves, combine)
            loss = total(mul(out[0].h, Tensor(weights.data[0], dtype=np.float64)))
            for t in range(1, 4):
                loss = add(loss, total(mul(out[t].h, Tensor(weights.data[t], dtype=np.float64))))
        return tape, loss

    tied = M.Combiner(cfg, params)
    tape, loss = run(tied)
    backward(tape, loss, list(params.values()))
    tied_grad = {k: params[k].grad.copy() for k in params if k.startswith(("comp", "refine"))}

    copies = []

    def untied(a, b):
        own = {k: Tensor(v.data.copy(), requires_grad=True, dtype=np.float64)
               for k, v in params.items() if k.startswith(("comp", "refine"))}
        copies.append(own)
        return M.Combiner(cfg, own)(a, b)

    tape, loss2 = run(untied)
    backward(tape, loss2, [t for c in copies for t in c.values()])
    assert len(copies) == plan.op_count
    assert loss2.item() == loss.item()
    for k, g in tied_grad.items():
        np.testing.assert_allclose(sum(c[k].grad for c in copies), g, rtol=1e-12, atol=1e-15)
