"""Single peephole LSTM layer: forward step, unroll, and backpropagation through time.

Update rules, with ``*`` elementwise and diagonal peepholes stored as vectors::

    i_t = sigm(W_xi x_t + W_hi h_{t-1} + w_ci * c_{t-1} + b_i)
    f_t = sigm(W_xf x_t + W_hf h_{t-1} + w_cf * c_{t-1} + b_f)
    g_t = tanh(W_xc x_t + W_hc h_{t-1} + b_c)
    c_t = f_t * c_{t-1} + i_t * g_t
    o_t = sigm(W_xo x_t + W_ho h_{t-1} + w_co * c_t + b_o)
    h_t = o_t * tanh(c_t)

Note that the output gate peeks at the *updated* cell state ``c_t``.

Every function accepts either single vectors (``x`` of shape ``(input,)``)
or batches of row vectors (``(batch, input)``); the shapes of the state
follow the shape of the input.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .numerics import DTYPE, Rng, ShapeError, affine, rand_uniform, sigmoid

GATE_MATRICES = ("W_xi", "W_xf", "W_xc", "W_xo", "W_hi", "W_hf", "W_hc", "W_ho")
PEEPHOLES = ("w_ci", "w_cf", "w_co")
BIASES = ("b_i", "b_f", "b_c", "b_o")


@dataclass
class LstmParams:
    W_xi: np.ndarray
    W_xf: np.ndarray
    W_xc: np.ndarray
    W_xo: np.ndarray
    W_hi: np.ndarray
    W_hf: np.ndarray
    W_hc: np.ndarray
    W_ho: np.ndarray
    w_ci: np.ndarray
    w_cf: np.ndarray
    w_co: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        hidden, n_in = self.W_xi.shape
        for name in GATE_MATRICES[:4]:
            if getattr(self, name).shape != (hidden, n_in):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(hidden, n_in)}")
        for name in GATE_MATRICES[4:]:
            if getattr(self, name).shape != (hidden, hidden):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(hidden, hidden)}")
        for name in PEEPHOLES + BIASES:
            if getattr(self, name).shape != (hidden,):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(hidden,)}")

    @property
    def hidden_dim(self) -> int:
        return self.W_xi.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_xi.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        """Field name -> array, in declaration order."""
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LstmParams":
        kw = {}
        for name in GATE_MATRICES:
            cols = input_dim if name.startswith("W_x") else hidden_dim
            kw[name] = np.zeros((hidden_dim, cols), dtype=DTYPE)
        for name in PEEPHOLES + BIASES:
            kw[name] = np.zeros(hidden_dim, dtype=DTYPE)
        return cls(**kw)

    @classmethod
    def init(
        cls,
        rng: Rng,
        input_dim: int,
        hidden_dim: int,
        scale: float = 0.08,
        forget_bias: float = 1.0,
    ) -> "LstmParams":
        """Uniform(-scale, scale) weights and peepholes, zero biases except ``b_f``."""
        p = cls.zeros(input_dim, hidden_dim)
        for name in GATE_MATRICES:
            w = getattr(p, name)
            w[...] = rand_uniform(rng, *w.shape, -scale, scale)
        for name in PEEPHOLES:
            getattr(p, name)[...] = rand_uniform(rng, 1, hidden_dim, -scale, scale)[0]
        p.b_f[...] = forget_bias
        return p

    def copy(self) -> "LstmParams":
        return LstmParams(**{k: v.copy() for k, v in self.tensors().items()})


@dataclass
class LstmState:
    c: np.ndarray
    h: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim: int, batch: int | None = None) -> "LstmState":
        shape = (hidden_dim,) if batch is None else (batch, hidden_dim)
        return cls(np.zeros(shape, dtype=DTYPE), np.zeros(shape, dtype=DTYPE))


@dataclass
class StepTape:
    """Everything one step's backward pass needs."""

    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


def lstm_step(p: LstmParams, x: np.ndarray, prev: LstmState) -> tuple[LstmState, StepTape]:
    if x.shape[-1] != p.input_dim:
        raise ShapeError(f"input has width {x.shape[-1]}, layer expects {p.input_dim}")
    if prev.c.shape[-1] != p.hidden_dim or prev.h.shape != prev.c.shape:
        raise ShapeError(
            f"state shapes c={prev.c.shape}, h={prev.h.shape} do not match hidden={p.hidden_dim}"
        )
    if x.shape[:-1] != prev.c.shape[:-1]:
        raise ShapeError(f"batch mismatch between input {x.shape} and state {prev.c.shape}")
    h_prev, c_prev = prev.h, prev.c
    i = sigmoid(affine(p.W_xi, x, p.b_i) + affine(p.W_hi, h_prev) + p.w_ci * c_prev)
    f = sigmoid(affine(p.W_xf, x, p.b_f) + affine(p.W_hf, h_prev) + p.w_cf * c_prev)
    g = np.tanh(affine(p.W_xc, x, p.b_c) + affine(p.W_hc, h_prev))
    c = f * c_prev + i * g
    o = sigmoid(affine(p.W_xo, x, p.b_o) + affine(p.W_ho, h_prev) + p.w_co * c)
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return LstmState(c, h), StepTape(x, h_prev, c_prev, i, f, g, o, c, tanh_c)


def lstm_forward(
    p: LstmParams, xs, init: LstmState | None = None
) -> tuple[list[LstmState], list[StepTape]]:
    xs = list(xs)
    if not xs:
        raise ValueError("lstm_forward needs a non-empty input sequence")
    if init is None:
        batch = None if xs[0].ndim == 1 else xs[0].shape[0]
        init = LstmState.zeros(p.hidden_dim, batch)
    states, tapes = [], []
    state = init
    for x in xs:
        state, tape = lstm_step(p, x, state)
        states.append(state)
        tapes.append(tape)
    return states, tapes


def _outer_sum(dz: np.ndarray, v: np.ndarray) -> np.ndarray:
    # sum over any leading batch axes of dz[..., :, None] * v[..., None, :]
    return dz.reshape(-1, dz.shape[-1]).T @ v.reshape(-1, v.shape[-1])


def _batch_sum(v: np.ndarray) -> np.ndarray:
    return v.reshape(-1, v.shape[-1]).sum(axis=0)


def lstm_step_backward(
    p: LstmParams,
    tape: StepTape,
    dh: np.ndarray,
    dc: np.ndarray,
    grads: LstmParams,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Back-propagate one step.

    ``dh`` is the total gradient reaching ``h_t`` and ``dc`` the gradient
    reaching ``c_t`` from the next step's carry path.  Parameter gradients
    are accumulated into ``grads`` in place.  Returns ``(dx, dh_prev, dc_prev)``.
    """
    i, f, g, o, tanh_c = tape.i, tape.f, tape.g, tape.o, tape.tanh_c
    dz_o = dh * tanh_c * o * (1.0 - o)
    dc = dc + dh * o * (1.0 - tanh_c * tanh_c) + dz_o * p.w_co
    dz_i = dc * g * i * (1.0 - i)
    dz_f = dc * tape.c_prev * f * (1.0 - f)
    dz_g = dc * i * (1.0 - g * g)

    for dz, wx, wh, b in (
        (dz_i, "W_xi", "W_hi", "b_i"),
        (dz_f, "W_xf", "W_hf", "b_f"),
        (dz_g, "W_xc", "W_hc", "b_c"),
        (dz_o, "W_xo", "W_ho", "b_o"),
    ):
        getattr(grads, wx)[...] += _outer_sum(dz, tape.x)
        getattr(grads, wh)[...] += _outer_sum(dz, tape.h_prev)
        getattr(grads, b)[...] += _batch_sum(dz)
    grads.w_ci += _batch_sum(dz_i * tape.c_prev)
    grads.w_cf += _batch_sum(dz_f * tape.c_prev)
    grads.w_co += _batch_sum(dz_o * tape.c)

    dx = dz_i @ p.W_xi + dz_f @ p.W_xf + dz_g @ p.W_xc + dz_o @ p.W_xo
    dh_prev = dz_i @ p.W_hi + dz_f @ p.W_hf + dz_g @ p.W_hc + dz_o @ p.W_ho
    dc_prev = dc * f + dz_i * p.w_ci + dz_f * p.w_cf
    return dx, dh_prev, dc_prev


def lstm_backward(
    p: LstmParams,
    tapes: list[StepTape],
    dh,
    dc_final: np.ndarray | None = None,
) -> tuple[LstmParams, list[np.ndarray], LstmState]:
    """Backpropagation through time over a full unroll.

    ``dh[t]`` is the upstream gradient on ``h_t`` (``None`` means zero) and
    ``dc_final`` the gradient on the last cell state.  Returns the parameter
    gradients, the per-step input gradients, and the gradient with respect
    to the initial state.
    """
    if not tapes:
        raise ValueError("lstm_backward needs at least one tape entry")
    dh = list(dh)
    if len(dh) != len(tapes):
        raise ShapeError(f"got {len(dh)} upstream gradients for {len(tapes)} steps")
    grads = LstmParams.zeros(p.input_dim, p.hidden_dim)
    shape = tapes[-1].c.shape
    dh_next = np.zeros(shape, dtype=DTYPE)
    dc_next = np.zeros(shape, dtype=DTYPE) if dc_final is None else np.asarray(dc_final, dtype=DTYPE)
    if dc_next.shape != shape:
        raise ShapeError(f"dc_final shape {dc_next.shape} does not match state shape {shape}")
    dxs: list[np.ndarray] = [None] * len(tapes)  # type: ignore[list-item]
    for t in reversed(range(len(tapes))):
        dh_t = dh_next if dh[t] is None else dh_next + dh[t]
        if dh_t.shape != shape:
            raise ShapeError(f"dh[{t}] shape {dh_t.shape} does not match state shape {shape}")
        dxs[t], dh_next, dc_next = lstm_step_backward(p, tapes[t], dh_t, dc_next, grads)
    return grads, dxs, LstmState(dc_next, dh_next)
