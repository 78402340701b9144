"""Frame-sequence autoencoder: dense frame embedding, LSTM encoder, and two LSTM decoders.

Data flow for one episode::

    frames --enc_dense(tanh)--> features --encoder LSTM--> (c, h)
    (c, h) --recon_decoder--> head --dec_dense(sigmoid)--> input frames (reversed by default)
    (c, h) --pred_decoder [+ action ; state]--> head --dec_dense--> future frames

Both decoders run closed-loop: each step consumes the feature vector the
head emitted on the previous step.  The reconstruction decoder starts from a
zero vector, the prediction decoder from the embedding of the last input
frame.  Everything is batched along a leading axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lstm import LstmParams, LstmState, lstm_forward, lstm_backward, lstm_step, lstm_step_backward
from .numerics import DTYPE, Rng, ShapeError, affine, rand_uniform, sigmoid

DENSE_KEYS = ("enc_dense.W", "enc_dense.b", "dec_dense.W", "dec_dense.b")


@dataclass(frozen=True)
class ModelConfig:
    frame_rows: int
    frame_cols: int
    feature_dim: int = 128
    hidden_dim: int = 128
    t_in: int = 5
    t_out: int = 5
    action_dim: int = 2
    state_dim: int = 4
    conditioned: bool = False
    recon_reversed: bool = True

    def __post_init__(self):
        for name in ("frame_rows", "frame_cols", "feature_dim", "hidden_dim", "t_in", "t_out",
                     "action_dim", "state_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def pixels(self) -> int:
        return self.frame_rows * self.frame_cols

    @property
    def pred_input_dim(self) -> int:
        if self.conditioned:
            return self.feature_dim + self.action_dim + self.state_dim
        return self.feature_dim


@dataclass
class ModelParams:
    config: ModelConfig
    enc_W: np.ndarray
    enc_b: np.ndarray
    dec_W: np.ndarray
    dec_b: np.ndarray
    encoder: LstmParams
    recon_decoder: LstmParams
    pred_decoder: LstmParams
    head_W: np.ndarray
    head_b: np.ndarray

    def __post_init__(self):
        cfg = self.config
        expected = {
            "enc_W": (cfg.feature_dim, cfg.pixels),
            "enc_b": (cfg.feature_dim,),
            "dec_W": (cfg.pixels, cfg.feature_dim),
            "dec_b": (cfg.pixels,),
            "head_W": (cfg.feature_dim, cfg.hidden_dim),
            "head_b": (cfg.feature_dim,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        for name, n_in in (("encoder", cfg.feature_dim), ("recon_decoder", cfg.feature_dim),
                           ("pred_decoder", cfg.pred_input_dim)):
            lp = getattr(self, name)
            if (lp.input_dim, lp.hidden_dim) != (n_in, cfg.hidden_dim):
                raise ShapeError(
                    f"{name} is {lp.input_dim}->{lp.hidden_dim}, expected {n_in}->{cfg.hidden_dim}"
                )

    def tensors(self) -> dict[str, np.ndarray]:
        """All trainable arrays by dotted name, in checkpoint order.

        The arrays are the live parameter storage; in-place updates through
        this mapping change the model.
        """
        out = {
            "enc_dense.W": self.enc_W,
            "enc_dense.b": self.enc_b,
            "dec_dense.W": self.dec_W,
            "dec_dense.b": self.dec_b,
        }
        for prefix in ("encoder", "recon_decoder", "pred_decoder"):
            for k, v in getattr(self, prefix).tensors().items():
                out[f"{prefix}.{k}"] = v
        out["head.W"] = self.head_W
        out["head.b"] = self.head_b
        return out

    def copy(self) -> "ModelParams":
        return ModelParams.from_tensors(self.config, {k: v.copy() for k, v in self.tensors().items()})

    @classmethod
    def from_tensors(cls, config: ModelConfig, t: dict[str, np.ndarray]) -> "ModelParams":
        def lstm(prefix):
            return LstmParams(**{k.split(".", 1)[1]: v for k, v in t.items() if k.startswith(prefix + ".")})

        return cls(
            config,
            t["enc_dense.W"], t["enc_dense.b"], t["dec_dense.W"], t["dec_dense.b"],
            lstm("encoder"), lstm("recon_decoder"), lstm("pred_decoder"),
            t["head.W"], t["head.b"],
        )

    @classmethod
    def zeros(cls, config: ModelConfig) -> "ModelParams":
        F, H, P = config.feature_dim, config.hidden_dim, config.pixels
        return cls(
            config,
            np.zeros((F, P)), np.zeros(F), np.zeros((P, F)), np.zeros(P),
            LstmParams.zeros(F, H), LstmParams.zeros(F, H), LstmParams.zeros(config.pred_input_dim, H),
            np.zeros((F, H)), np.zeros(F),
        )

    @classmethod
    def init(cls, config: ModelConfig, rng: Rng, scale: float = 0.08, forget_bias: float = 1.0) -> "ModelParams":
        F, H, P = config.feature_dim, config.hidden_dim, config.pixels
        return cls(
            config,
            rand_uniform(rng, F, P, -scale, scale), np.zeros(F),
            rand_uniform(rng, P, F, -scale, scale), np.zeros(P),
            LstmParams.init(rng, F, H, scale, forget_bias),
            LstmParams.init(rng, F, H, scale, forget_bias),
            LstmParams.init(rng, config.pred_input_dim, H, scale, forget_bias),
            rand_uniform(rng, F, H, -scale, scale), np.zeros(F),
        )

    def n_params(self) -> int:
        return sum(v.size for v in self.tensors().values())


@dataclass
class SequenceBatch:
    """Preprocessed episodes ready for the model.

    ``inputs`` is ``(B, t_in, rows, cols)`` and ``targets`` ``(B, t_out, rows, cols)``,
    both real-valued (normally in [0, 1]).  ``actions``/``states`` are
    ``(B, t_out, dim)``.
    """

    inputs: np.ndarray
    targets: np.ndarray
    actions: np.ndarray
    states: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def check(self, cfg: ModelConfig) -> None:
        B = self.inputs.shape[0]
        want = {
            "inputs": (B, cfg.t_in, cfg.frame_rows, cfg.frame_cols),
            "targets": (B, cfg.t_out, cfg.frame_rows, cfg.frame_cols),
            "actions": (B, cfg.t_out, cfg.action_dim),
            "states": (B, cfg.t_out, cfg.state_dim),
        }
        for name, shape in want.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"batch {name} has shape {getattr(self, name).shape}, expected {shape}")

    def subset(self, idx) -> "SequenceBatch":
        return SequenceBatch(self.inputs[idx], self.targets[idx], self.actions[idx], self.states[idx])


@dataclass
class Conditioning:
    actions: np.ndarray  # (B, t_out, action_dim)
    states: np.ndarray  # (B, t_out, state_dim)


def embed_frames(p: ModelParams, frames: np.ndarray) -> np.ndarray:
    cfg = p.config
    if frames.shape[-2:] != (cfg.frame_rows, cfg.frame_cols):
        raise ShapeError(f"frames of shape {frames.shape[-2:]} do not match {cfg.frame_rows}x{cfg.frame_cols}")
    flat = frames.reshape(*frames.shape[:-2], cfg.pixels)
    return np.tanh(affine(p.enc_W, flat, p.enc_b))


def encode(p: ModelParams, features: np.ndarray) -> LstmState:
    """Run the encoder over ``features`` ``(B, t_in, F)`` from a zero state."""
    return _encode(p, features)[0]


def _encode(p, features):
    if features.shape[1] != p.config.t_in:
        raise ShapeError(f"encoder expects {p.config.t_in} steps, got {features.shape[1]}")
    states, tapes = lstm_forward(p.encoder, [features[:, t] for t in range(features.shape[1])])
    return states[-1], tapes


@dataclass
class _DecoderTrace:
    tapes: list
    feats: list
    outs: list
    closed_loop: bool


def _run_decoder(p, lp, ctx, first_input, steps, extras=None, teacher=None):
    state = ctx
    u = first_input
    tapes, feats, outs = [], [], []
    for k in range(steps):
        x = u if extras is None else np.concatenate([u, extras[:, k]], axis=-1)
        state, tape = lstm_step(lp, x, state)
        feat = affine(p.head_W, state.h, p.head_b)
        outs.append(sigmoid(affine(p.dec_W, feat, p.dec_b)))
        tapes.append(tape)
        feats.append(feat)
        if k + 1 < steps:
            u = feat if teacher is None else teacher[:, k]
    return _DecoderTrace(tapes, feats, outs, teacher is None)


def _frames(p, outs):
    cfg = p.config
    stacked = np.stack(outs, axis=1)
    return stacked.reshape(stacked.shape[0], len(outs), cfg.frame_rows, cfg.frame_cols)


def decode_reconstruction(p: ModelParams, ctx: LstmState) -> np.ndarray:
    """Reconstruct the ``t_in`` input frames from the encoder context.

    Output order is the reconstruction target order: last input frame first
    when ``recon_reversed`` is set.
    """
    batch = ctx.h.shape[0]
    trace = _run_decoder(p, p.recon_decoder, ctx, np.zeros((batch, p.config.feature_dim)), p.config.t_in)
    return _frames(p, trace.outs)


def decode_prediction(
    p: ModelParams, ctx: LstmState, last_feature: np.ndarray, cond: Conditioning | None = None
) -> np.ndarray:
    """Predict ``t_out`` future frames (t+1 first) from the encoder context.

    ``last_feature`` is the embedding of the last input frame and seeds the
    first decoder step.  ``cond`` must be given exactly when the model is
    conditioned.
    """
    extras = _conditioning_extras(p.config, cond)
    trace = _run_decoder(p, p.pred_decoder, ctx, last_feature, p.config.t_out, extras)
    return _frames(p, trace.outs)


def _conditioning_extras(cfg: ModelConfig, cond):
    if cfg.conditioned and cond is None:
        raise ValueError("conditioned model requires action/state conditioning")
    if not cfg.conditioned and cond is not None:
        raise ValueError("unconditioned model does not accept conditioning")
    if cond is None:
        return None
    if cond.actions.shape[1:] != (cfg.t_out, cfg.action_dim):
        raise ShapeError(f"actions shape {cond.actions.shape} does not match (B, {cfg.t_out}, {cfg.action_dim})")
    if cond.states.shape[1:] != (cfg.t_out, cfg.state_dim):
        raise ShapeError(f"states shape {cond.states.shape} does not match (B, {cfg.t_out}, {cfg.state_dim})")
    return np.concatenate([cond.actions, cond.states], axis=-1)


def recon_targets(cfg: ModelConfig, inputs: np.ndarray) -> np.ndarray:
    return inputs[:, ::-1] if cfg.recon_reversed else inputs


@dataclass
class ForwardCache:
    loss: float
    recon_mse: float
    pred_mse: float
    recon: np.ndarray
    pred: np.ndarray
    batch: SequenceBatch = field(repr=False)
    emb_in: np.ndarray = field(repr=False)
    emb_tgt: np.ndarray | None = field(repr=False)
    enc_tapes: list = field(repr=False)
    recon_trace: _DecoderTrace = field(repr=False)
    pred_trace: _DecoderTrace = field(repr=False)


def forward(p: ModelParams, batch: SequenceBatch, teacher_forcing: bool = False) -> ForwardCache:
    """Run both branches and compute the loss.

    loss = MSE(reconstruction, reconstruction targets) + MSE(prediction, future frames),
    each MSE averaged over episodes, frames and pixels.
    """
    cfg = p.config
    batch.check(cfg)
    B = len(batch)
    emb_in = embed_frames(p, batch.inputs)
    ctx, enc_tapes = _encode(p, emb_in)

    recon_tgt = recon_targets(cfg, batch.inputs)
    emb_tgt = None
    recon_teacher = pred_teacher = None
    if teacher_forcing:
        recon_teacher = recon_targets(cfg, emb_in)
        emb_tgt = embed_frames(p, batch.targets)
        pred_teacher = emb_tgt
    recon_trace = _run_decoder(p, p.recon_decoder, ctx, np.zeros((B, cfg.feature_dim)), cfg.t_in,
                               teacher=recon_teacher)
    extras = None
    if cfg.conditioned:
        extras = _conditioning_extras(cfg, Conditioning(batch.actions, batch.states))
    pred_trace = _run_decoder(p, p.pred_decoder, ctx, emb_in[:, -1], cfg.t_out, extras, teacher=pred_teacher)

    recon = _frames(p, recon_trace.outs)
    pred = _frames(p, pred_trace.outs)
    recon_mse = float(np.mean((recon - recon_tgt) ** 2))
    pred_mse = float(np.mean((pred - batch.targets) ** 2))
    return ForwardCache(recon_mse + pred_mse, recon_mse, pred_mse, recon, pred, batch,
                        emb_in, emb_tgt, enc_tapes, recon_trace, pred_trace)


def forward_loss(p: ModelParams, batch: SequenceBatch, teacher_forcing: bool = False) -> tuple[float, ForwardCache]:
    cache = forward(p, batch, teacher_forcing)
    return cache.loss, cache


def _zero_grads(p: ModelParams, freeze_dense: bool) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in p.tensors().items() if not (freeze_dense and k in DENSE_KEYS)}


def _decoder_backward(p, lp, prefix, trace, targets, grads, freeze_dense):
    """Reverse pass through one closed-loop (or teacher-forced) decoder.

    Returns the gradient on the first step's feature input, on each
    teacher-forced input (or ``None``), and on the context state.
    """
    steps = len(trace.tapes)
    F = p.config.feature_dim
    scale = 2.0 / targets.size
    lstm_grads = LstmParams.zeros(lp.input_dim, lp.hidden_dim)
    dh_rec = np.zeros_like(trace.tapes[-1].c)
    dc_rec = np.zeros_like(dh_rec)
    dfeat_carry = None
    d_teacher = [None] * max(steps - 1, 0)
    d_first = None
    for k in reversed(range(steps)):
        out = trace.outs[k]
        tgt = targets[:, k].reshape(out.shape)
        dlogit = scale * (out - tgt) * out * (1.0 - out)
        if not freeze_dense:
            grads["dec_dense.W"] += dlogit.T @ trace.feats[k]
            grads["dec_dense.b"] += dlogit.sum(axis=0)
        dfeat = dlogit @ p.dec_W
        if dfeat_carry is not None:
            dfeat = dfeat + dfeat_carry
        h = trace.tapes[k].o * trace.tapes[k].tanh_c
        grads["head.W"] += dfeat.T @ h
        grads["head.b"] += dfeat.sum(axis=0)
        dh = dfeat @ p.head_W + dh_rec
        dx, dh_rec, dc_rec = lstm_step_backward(lp, trace.tapes[k], dh, dc_rec, lstm_grads)
        du = dx[:, :F]
        if k == 0:
            d_first = du
        elif trace.closed_loop:
            dfeat_carry = du
        else:
            d_teacher[k - 1] = du
    for name, g in lstm_grads.tensors().items():
        grads[f"{prefix}.{name}"] += g
    return d_first, d_teacher, LstmState(dc_rec, dh_rec)


def backward(p: ModelParams, cache: ForwardCache, freeze_dense: bool = False) -> dict[str, np.ndarray]:
    """Gradient of ``cache.loss`` with respect to every trainable tensor.

    With ``freeze_dense`` the embedding and output dense layers are treated
    as constants and their entries are absent from the result.
    """
    cfg = p.config
    batch = cache.batch
    grads = _zero_grads(p, freeze_dense)
    recon_tgt = recon_targets(cfg, batch.inputs)

    _, d_teach_r, dctx_r = _decoder_backward(
        p, p.recon_decoder, "recon_decoder", cache.recon_trace, recon_tgt, grads, freeze_dense)
    d_first_p, d_teach_p, dctx_p = _decoder_backward(
        p, p.pred_decoder, "pred_decoder", cache.pred_trace, batch.targets, grads, freeze_dense)

    demb_in = np.zeros_like(cache.emb_in)
    demb_in[:, -1] += d_first_p
    if not cache.recon_trace.closed_loop:
        # teacher inputs are the (possibly reversed) input embeddings, positions 0..t_in-2
        order = list(range(cfg.t_in))[::-1] if cfg.recon_reversed else list(range(cfg.t_in))
        for k, d in enumerate(d_teach_r):
            demb_in[:, order[k]] += d

    dh_final = dctx_r.h + dctx_p.h
    dc_final = dctx_r.c + dctx_p.c
    dh_seq = [None] * (cfg.t_in - 1) + [dh_final]
    enc_grads, dxs, _ = lstm_backward(p.encoder, cache.enc_tapes, dh_seq, dc_final)
    for name, g in enc_grads.tensors().items():
        grads[f"encoder.{name}"] += g
    for t, dx in enumerate(dxs):
        demb_in[:, t] += dx

    if not freeze_dense:
        P = cfg.pixels
        x_in = batch.inputs.reshape(len(batch), cfg.t_in, P)
        dpre = demb_in * (1.0 - cache.emb_in ** 2)
        grads["enc_dense.W"] += np.einsum("btf,btp->fp", dpre, x_in)
        grads["enc_dense.b"] += dpre.sum(axis=(0, 1))
        if cache.emb_tgt is not None:
            demb_tgt = np.zeros_like(cache.emb_tgt)
            for k, d in enumerate(d_teach_p):
                demb_tgt[:, k] += d
            dpre_t = demb_tgt * (1.0 - cache.emb_tgt ** 2)
            x_tgt = batch.targets.reshape(len(batch), cfg.t_out, P)
            grads["enc_dense.W"] += np.einsum("btf,btp->fp", dpre_t, x_tgt)
            grads["enc_dense.b"] += dpre_t.sum(axis=(0, 1))
    return grads


def predict(p: ModelParams, batch: SequenceBatch) -> tuple[np.ndarray, np.ndarray]:
    """Closed-loop reconstruction and prediction for a batch: ``(recon, pred)``."""
    cache = forward(p, batch)
    return cache.recon, cache.pred
