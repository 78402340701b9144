import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import reference
from framecast.lstm import LstmParams, LstmState, lstm_backward, lstm_forward, lstm_step
from framecast.numerics import Rng, ShapeError


def random_params(seed, input_dim, hidden_dim, scale=0.5):
    g = np.random.default_rng(seed)
    p = LstmParams.zeros(input_dim, hidden_dim)
    for arr in p.tensors().values():
        arr[...] = g.uniform(-scale, scale, arr.shape)
    return p


def as_lists(p):
    return {k: v.tolist() for k, v in p.tensors().items()}


def test_zero_params_give_zero_state():
    p = LstmParams.zeros(3, 4)
    s, _ = lstm_step(p, np.ones(3), LstmState.zeros(4))
    # i = f = o = 0.5, g = tanh(0) = 0
    np.testing.assert_array_equal(s.c, 0.0)
    np.testing.assert_array_equal(s.h, 0.0)


def test_saturated_gates_hold_memory_exactly():
    p = LstmParams.zeros(2, 3)
    p.b_f[:] = 50.0
    p.b_i[:] = -50.0
    p.b_o[:] = 50.0
    state = LstmState(np.full(3, 0.7), np.zeros(3))
    xs = np.random.default_rng(0).normal(size=(50, 2))
    for x in xs:
        state, _ = lstm_step(p, x, state)
        assert np.all(state.c == 0.7)
    # tanh(0.7) to 16 digits (mpmath)
    np.testing.assert_allclose(state.h, 0.6043677771171636, rtol=0, atol=1e-15)


@pytest.mark.parametrize("case", range(100))
def test_step_matches_scalar_reference(case):
    g = np.random.default_rng(1000 + case)
    n_in, n_h = int(g.integers(1, 6)), int(g.integers(1, 6))
    p = random_params(case, n_in, n_h, scale=1.0)
    x, c, h = g.normal(size=n_in), g.normal(size=n_h), g.uniform(-1, 1, n_h)
    s, tape = lstm_step(p, x, LstmState(c, h))
    rc, rh, gates = reference.lstm_step(as_lists(p), x.tolist(), c.tolist(), h.tolist())
    np.testing.assert_allclose(s.c, rc, rtol=0, atol=1e-12)
    np.testing.assert_allclose(s.h, rh, rtol=0, atol=1e-12)
    for name in "ifgo":
        np.testing.assert_allclose(getattr(tape, name), gates[name], rtol=0, atol=1e-12)


def test_forward_is_step_composition():
    p = random_params(7, 2, 3)
    xs = list(np.random.default_rng(7).normal(size=(4, 2)))
    states, tapes = lstm_forward(p, xs)
    s = LstmState.zeros(3)
    for t, x in enumerate(xs):
        s, _ = lstm_step(p, x, s)
        np.testing.assert_array_equal(states[t].h, s.h)
        np.testing.assert_array_equal(states[t].c, s.c)
    assert len(tapes) == 4


def test_batched_step_matches_rows():
    p = random_params(2, 3, 4)
    g = np.random.default_rng(2)
    x, c, h = g.normal(size=(5, 3)), g.normal(size=(5, 4)), g.normal(size=(5, 4))
    s, _ = lstm_step(p, x, LstmState(c, h))
    for b in range(5):
        sb, _ = lstm_step(p, x[b], LstmState(c[b], h[b]))
        np.testing.assert_allclose(s.h[b], sb.h, atol=1e-15)


def test_empty_sequence_rejected():
    with pytest.raises(ValueError):
        lstm_forward(LstmParams.zeros(2, 2), [])


def test_input_width_checked():
    with pytest.raises(ShapeError):
        lstm_step(LstmParams.zeros(2, 2), np.ones(3), LstmState.zeros(2))


def test_peepholes_are_diagonal():
    # c_prev in unit k may only reach unit k's gates through the peepholes
    p = LstmParams.zeros(1, 3)
    p.w_ci[:] = [1.0, 2.0, 3.0]
    p.w_cf[:] = [1.0, 2.0, 3.0]
    p.w_co[:] = [1.0, 2.0, 3.0]
    base, t0 = lstm_step(p, np.zeros(1), LstmState(np.zeros(3), np.zeros(3)))
    bumped, t1 = lstm_step(p, np.zeros(1), LstmState(np.array([0.0, 0.9, 0.0]), np.zeros(3)))
    for gate in ("i", "f", "o"):
        d = getattr(t1, gate) - getattr(t0, gate)
        assert d[1] != 0 and d[0] == 0 and d[2] == 0


def _sequence_loss(p, xs, wh, wc):
    states, tapes = lstm_forward(p, xs)
    loss = sum(float(np.sum(w * s.h)) for w, s in zip(wh, states)) + float(np.sum(wc * states[-1].c))
    return loss, tapes


def test_bptt_matches_finite_differences():
    hidden, n_in, T = 4, 3, 3
    p = random_params(11, n_in, hidden)
    g = np.random.default_rng(11)
    xs = list(g.normal(size=(T, n_in)))
    wh, wc = g.normal(size=(T, hidden)), g.normal(size=hidden)
    _, tapes = _sequence_loss(p, xs, wh, wc)
    grads, dxs, _ = lstm_backward(p, tapes, list(wh), wc)

    eps = 1e-6
    worst = 0.0
    for name, arr in p.tensors().items():
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + eps
            lp, _ = _sequence_loss(p, xs, wh, wc)
            arr[idx] = old - eps
            lm, _ = _sequence_loss(p, xs, wh, wc)
            arr[idx] = old
            num = (lp - lm) / (2 * eps)
            a = grads.tensors()[name][idx]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-8))
    for t in range(T):
        for k in range(n_in):
            xp = [x.copy() for x in xs]
            xp[t][k] += eps
            lp, _ = _sequence_loss(p, xp, wh, wc)
            xp[t][k] -= 2 * eps
            lm, _ = _sequence_loss(p, xp, wh, wc)
            num = (lp - lm) / (2 * eps)
            worst = max(worst, abs(dxs[t][k] - num) / max(abs(dxs[t][k]), abs(num), 1e-8))
    assert worst < 1e-4


def test_zero_upstream_gives_zero_gradients():
    p = random_params(3, 2, 3)
    _, tapes = lstm_forward(p, list(np.random.default_rng(3).normal(size=(4, 2))))
    grads, dxs, d0 = lstm_backward(p, tapes, [None] * 4)
    for arr in grads.tensors().values():
        assert not np.any(arr)
    assert not any(np.any(d) for d in dxs)
    assert not np.any(d0.c) and not np.any(d0.h)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-20, 20), st.floats(-20, 20))
def test_gates_in_unit_interval_and_cell_bounded(seed, xscale, cscale):
    p = random_params(seed, 2, 3, scale=2.0)
    g = np.random.default_rng(seed)
    c_prev = g.uniform(-1, 1, 3) * cscale
    s, tape = lstm_step(p, g.normal(size=2) * xscale, LstmState(c_prev, g.uniform(-1, 1, 3)))
    for gate in (tape.i, tape.f, tape.o):
        assert np.all((gate >= 0) & (gate <= 1))
    assert np.all(np.abs(tape.g) <= 1)
    # |c_t| <= |c_{t-1}| + 1 because f, i in [0, 1] and |g| <= 1
    assert np.all(np.abs(s.c) <= np.abs(c_prev) + 1 + 1e-12)
    assert np.all(np.abs(s.h) <= 1)


def test_init_distribution():
    p = LstmParams.init(Rng(0), 10, 20)
    assert np.all(p.b_f == 1.0) and np.all(p.b_i == 0.0)
    assert np.abs(p.W_xi).max() <= 0.08
    assert math.isclose(float(np.std(p.W_hc)), 0.08 / math.sqrt(3), rel_tol=0.1)
