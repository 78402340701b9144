"""Optimizers, dense-layer pretraining, the sequence training loop, gradient checking and evaluation."""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import DENSE_KEYS, ModelParams, SequenceBatch, backward, forward, forward_loss, recon_targets
from .numerics import Rng, rand_uniform, sigmoid

log = logging.getLogger(__name__)

# episodes per gradient shard; gradients are always reduced shard by shard in
# index order so the result does not depend on the number of workers
SHARD = 8


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class OptimConfig:
    algorithm: str = "adam"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    epochs: int = 50
    batch_size: int = 16
    seed: int = 0
    freeze_dense: bool = True
    teacher_forcing: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.algorithm not in ("adam", "sgd"):
            raise ValueError(f"algorithm must be 'adam' or 'sgd', got {self.algorithm!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


class SGD:
    """Gradient descent with heavy-ball momentum."""

    def __init__(self, lr: float, momentum: float = 0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            v = self.velocity.get(k)
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[k] = v
            params[k] -= self.lr * v


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: OptimConfig):
    if cfg.algorithm == "adam":
        return Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    return SGD(cfg.learning_rate, cfg.momentum)


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``; return the pre-clip norm."""
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# -- dense pretraining --------------------------------------------------------

@dataclass
class DenseAutoencoder:
    enc_W: np.ndarray
    enc_b: np.ndarray
    dec_W: np.ndarray
    dec_b: np.ndarray
    losses: list[float] = field(default_factory=list)

    def tensors(self) -> dict[str, np.ndarray]:
        return dict(zip(DENSE_KEYS, (self.enc_W, self.enc_b, self.dec_W, self.dec_b)))

    def reconstruct(self, flat: np.ndarray) -> np.ndarray:
        feat = np.tanh(flat @ self.enc_W.T + self.enc_b)
        return sigmoid(feat @ self.dec_W.T + self.dec_b)


def pretrain_dense(
    frames: np.ndarray,
    feature_dim: int,
    cfg: OptimConfig,
    init_scale: float = 0.08,
) -> DenseAutoencoder:
    """Train the frame embedding and output layers as a one-frame autoencoder.

    ``frames`` is a stack of preprocessed frames ``(N, rows, cols)``.  The
    loss is the per-pixel MSE; ``losses`` records the mean training loss of
    every epoch.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or len(frames) == 0:
        raise ValueError("pretrain_dense needs a non-empty (N, rows, cols) frame stack")
    n, rows, cols = frames.shape
    P = rows * cols
    X = frames.reshape(n, P)
    rng = Rng(cfg.seed)
    ae = DenseAutoencoder(
        rand_uniform(rng, feature_dim, P, -init_scale, init_scale), np.zeros(feature_dim),
        rand_uniform(rng, P, feature_dim, -init_scale, init_scale), np.zeros(P),
    )
    params = ae.tensors()
    opt = make_optimizer(cfg)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            x = X[order[s:s + cfg.batch_size]]
            feat = np.tanh(x @ ae.enc_W.T + ae.enc_b)
            y = sigmoid(feat @ ae.dec_W.T + ae.dec_b)
            diff = y - x
            loss = float(np.mean(diff * diff))
            if not np.isfinite(loss):
                raise TrainingDiverged(f"pretraining loss became non-finite at epoch {epoch}, batch starting {s}")
            total += loss * len(x)
            dlogit = (2.0 / diff.size) * diff * y * (1.0 - y)
            dfeat = dlogit @ ae.dec_W
            dpre = dfeat * (1.0 - feat * feat)
            grads = {
                "enc_dense.W": dpre.T @ x,
                "enc_dense.b": dpre.sum(axis=0),
                "dec_dense.W": dlogit.T @ feat,
                "dec_dense.b": dlogit.sum(axis=0),
            }
            clip_by_global_norm(grads, cfg.clip_norm)
            opt.step(params, grads)
        ae.losses.append(total / n)
    return ae


def adopt_dense(model: ModelParams, dense: DenseAutoencoder) -> None:
    """Copy pretrained dense layers into ``model`` in place."""
    for k, v in dense.tensors().items():
        model.tensors()[k][...] = v


# -- sequence training ------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_recon: float
    val_pred: float
    seconds: float

    @property
    def val_loss(self) -> float:
        return self.val_recon + self.val_pred


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    horizon_mse: list[float] = field(default_factory=list)

    def losses(self) -> list[tuple[float, float, float]]:
        """The timing-free part of the report, for determinism comparisons."""
        return [(e.train_loss, e.val_recon, e.val_pred) for e in self.epochs]

    def to_text(self) -> str:
        lines = ["# epoch train_loss val_loss seconds"]
        for e in self.epochs:
            lines.append(f"{e.epoch} {e.train_loss:.10g} {e.val_loss:.10g} {e.seconds:.3f}")
        if self.horizon_mse:
            lines.append("# horizon prediction_mse")
            lines.extend(f"{h} {m:.10g}" for h, m in enumerate(self.horizon_mse, 1))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_recon", "val_pred", "val_loss", "seconds"])
        for e in self.epochs:
            w.writerow([e.epoch, repr(e.train_loss), repr(e.val_recon), repr(e.val_pred), repr(e.val_loss),
                        f"{e.seconds:.6f}"])
        return buf.getvalue()

    def horizons_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["horizon", "prediction_mse"])
        for h, m in enumerate(self.horizon_mse, 1):
            w.writerow([h, repr(m)])
        return buf.getvalue()


def split_indices(n: int, val_fraction: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic split: the last ``val_fraction`` of episodes (by index) are held out."""
    n_val = int(n * val_fraction)
    return np.arange(n - n_val), np.arange(n - n_val, n)


def batch_gradient(
    model: ModelParams,
    batch: SequenceBatch,
    freeze_dense: bool = False,
    teacher_forcing: bool = False,
    pool: ThreadPoolExecutor | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss and gradient over ``batch``, reduced shard by shard in index order."""
    n = len(batch)
    shards = [batch.subset(slice(s, s + SHARD)) for s in range(0, n, SHARD)]

    def one(shard):
        loss, cache = forward_loss(model, shard, teacher_forcing)
        return loss, backward(model, cache, freeze_dense)

    results = list(pool.map(one, shards)) if pool is not None else [one(s) for s in shards]
    total_loss = 0.0
    grads = None
    for shard, (loss, g) in zip(shards, results):
        w = len(shard) / n
        total_loss += w * loss
        if grads is None:
            grads = {k: w * v for k, v in g.items()}
        else:
            for k, v in g.items():
                grads[k] += w * v
    return total_loss, grads


def branch_losses(model: ModelParams, batch: SequenceBatch) -> tuple[float, float]:
    """(reconstruction MSE, prediction MSE) over a batch, evaluated in shards."""
    if len(batch) == 0:
        return float("nan"), float("nan")
    r = p = 0.0
    for s in range(0, len(batch), 64):
        shard = batch.subset(slice(s, s + 64))
        c = forward(model, shard)
        r += c.recon_mse * len(shard)
        p += c.pred_mse * len(shard)
    return r / len(batch), p / len(batch)


def train(
    model: ModelParams,
    data: SequenceBatch,
    cfg: OptimConfig,
    val_fraction: float = 0.1,
    on_epoch=None,
) -> tuple[ModelParams, TrainReport]:
    """Mini-batch training with global-norm clipping.

    The last ``val_fraction`` of episodes is held out for validation; when
    that leaves no episodes (tiny datasets) validation falls back to the
    training episodes.  Returns a trained copy; ``model`` is untouched.
    """
    data.check(model.config)
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    model = model.copy()
    train_idx, val_idx = split_indices(len(data), val_fraction)
    if len(val_idx) == 0:
        val_idx = train_idx
    train_set = data.subset(train_idx)
    val_set = data.subset(val_idx)
    params = model.tensors()
    opt = make_optimizer(cfg)
    rng = Rng(cfg.seed)
    report = TrainReport()
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(len(train_set))
            total = 0.0
            for b, s in enumerate(range(0, len(order), cfg.batch_size)):
                idx = order[s:s + cfg.batch_size]
                loss, grads = batch_gradient(model, train_set.subset(idx), cfg.freeze_dense,
                                             cfg.teacher_forcing, pool)
                if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                    episodes = sorted(int(train_idx[i]) for i in idx)
                    raise TrainingDiverged(
                        f"non-finite loss/gradient at epoch {epoch}, batch {b} (episodes {episodes})"
                    )
                total += loss * len(idx)
                clip_by_global_norm(grads, cfg.clip_norm)
                opt.step(params, grads)
            val_r, val_p = branch_losses(model, val_set)
            rec = EpochRecord(epoch, total / len(train_set), val_r, val_p, time.perf_counter() - t0)
            report.epochs.append(rec)
            log.info("epoch %d train %.6g val_recon %.6g val_pred %.6g (%.1fs)",
                     epoch, rec.train_loss, val_r, val_p, rec.seconds)
            if on_epoch is not None:
                on_epoch(rec)
    finally:
        if pool is not None:
            pool.shutdown()
    report.horizon_mse = evaluate(model, val_set).horizon_mse.tolist()
    return model, report


# -- gradient checking ------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    passed: bool
    n_checked: int
    seconds: float

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict}: max relative error {self.max_rel_error:.3e} at "
                f"{self.worst_param}{list(self.worst_index)} over {self.n_checked} parameters")


def grad_check(
    model: ModelParams,
    batch: SequenceBatch,
    eps: float = 1e-5,
    tol: float = 1e-4,
    freeze_dense: bool = False,
    teacher_forcing: bool = False,
    analytic: dict[str, np.ndarray] | None = None,
    abs_floor: float = 1e-8,
) -> GradCheckReport:
    """Compare backprop gradients with central finite differences on every unfrozen scalar.

    The error for one scalar is ``|a - n| / max(|a|, |n|)``, or the absolute
    error ``|a - n|`` when both are below ``abs_floor``.  The finite
    differences are evaluated in ``np.longdouble``: at ``eps = 1e-5`` the
    float64 rounding noise of the loss (about 1e-12 after division) is the
    same size as many genuine gradients, and extended precision moves that
    floor well below the tolerance.  ``analytic`` overrides the gradients
    under test (used for fault injection).
    """
    t0 = time.perf_counter()
    if analytic is None:
        _, cache = forward_loss(model, batch, teacher_forcing)
        analytic = backward(model, cache, freeze_dense)
    wide = np.longdouble
    wide_model = ModelParams.from_tensors(model.config, {k: v.astype(wide) for k, v in model.tensors().items()})
    wide_batch = SequenceBatch(*(a.astype(wide) for a in (batch.inputs, batch.targets, batch.actions, batch.states)))
    recon_tgt = recon_targets(model.config, wide_batch.inputs)

    def loss() -> np.longdouble:
        c = forward(wide_model, wide_batch, teacher_forcing)
        return np.mean((c.recon - recon_tgt) ** 2) + np.mean((c.pred - wide_batch.targets) ** 2)

    h = wide(eps)
    worst = (-1.0, "", ())
    n = 0
    for name, arr in wide_model.tensors().items():
        if freeze_dense and name in DENSE_KEYS:
            continue
        a_arr = analytic[name]
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            lp = loss()
            arr[idx] = old - h
            lm = loss()
            arr[idx] = old
            num = float((lp - lm) / (2 * h))
            a = float(a_arr[idx])
            scale = max(abs(a), abs(num))
            err = abs(a - num) / scale if scale >= abs_floor else abs(a - num)
            n += 1
            if err > worst[0]:
                worst = (err, name, idx)
    return GradCheckReport(worst[0], worst[1], worst[2], worst[0] < tol, n, time.perf_counter() - t0)


# -- evaluation -------------------------------------------------------------

@dataclass
class Metrics:
    horizon_mse: np.ndarray
    recon_mse: float
    copy_mse: np.ndarray
    linear_mse: np.ndarray

    @property
    def mean_mse(self) -> float:
        return float(np.mean(self.horizon_mse))

    @property
    def copy_mean(self) -> float:
        return float(np.mean(self.copy_mse))

    @property
    def linear_mean(self) -> float:
        return float(np.mean(self.linear_mse))

    def rows(self) -> list[tuple[str, float, float, float]]:
        """(horizon label, model, copy-last, linear) per horizon plus the mean."""
        out = [(str(h), float(m), float(c), float(lin))
               for h, (m, c, lin) in enumerate(zip(self.horizon_mse, self.copy_mse, self.linear_mse), 1)]
        out.append(("mean", self.mean_mse, self.copy_mean, self.linear_mean))
        return out


def copy_last_baseline(inputs: np.ndarray, t_out: int) -> np.ndarray:
    return np.repeat(inputs[:, -1:], t_out, axis=1)


def linear_baseline(inputs: np.ndarray, t_out: int) -> np.ndarray:
    """Extrapolate each pixel along the last two input frames, clamped to [0, 1]."""
    last = inputs[:, -1:]
    if inputs.shape[1] < 2:
        return np.repeat(last, t_out, axis=1)
    step = last - inputs[:, -2:-1]
    h = np.arange(1, t_out + 1).reshape(1, t_out, 1, 1)
    return np.clip(last + h * step, 0.0, 1.0)


def per_horizon_mse(pred: np.ndarray, targets: np.ndarray) -> np.ndarray:
    return np.mean((pred - targets) ** 2, axis=(0, 2, 3))


def evaluate(model: ModelParams, data: SequenceBatch, predictions: np.ndarray | None = None) -> Metrics:
    """Per-horizon prediction MSE, reconstruction MSE, and both baselines on the same episodes.

    ``predictions`` substitutes for the model's own output (same shape as
    ``data.targets``) when given.
    """
    t_out = data.targets.shape[1]
    if predictions is None:
        preds, recon_err = [], 0.0
        for s in range(0, len(data), 64):
            c = forward(model, data.subset(slice(s, s + 64)))
            preds.append(c.pred)
            recon_err += c.recon_mse * c.pred.shape[0]
        predictions = np.concatenate(preds)
        recon_mse = recon_err / len(data)
    else:
        recon_mse = float("nan")
    return Metrics(
        per_horizon_mse(predictions, data.targets),
        recon_mse,
        per_horizon_mse(copy_last_baseline(data.inputs, t_out), data.targets),
        per_horizon_mse(linear_baseline(data.inputs, t_out), data.targets),
    )
