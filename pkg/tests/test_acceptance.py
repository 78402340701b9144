"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed as they happen (visible with ``-s``) and repeated in an
"acceptance criteria" section of the pytest terminal summary.  The desk-scale
runs (criteria 4 and 5) take a few minutes on a laptop CPU.
"""

import struct
import time

import numpy as np
import pytest

import reference
from conftest import ACCEPTANCE, random_batch
from framecast.formats import (
    checkpoint_to_bytes, dataset_to_bytes, pgm_bytes, read_checkpoint, read_dataset, read_pgm, write_checkpoint,
    write_dataset, write_pgm,
)
from framecast.lstm import LstmParams, LstmState, lstm_step
from framecast.model import ModelConfig, ModelParams, SequenceBatch, forward
from framecast.numerics import Rng
from framecast.preprocess import PreprocessConfig, dataset_batch
from framecast.scene import WorldSpec, generate_dataset
from framecast.training import OptimConfig, adopt_dense, evaluate, grad_check, pretrain_dense, split_indices, train

pytestmark = pytest.mark.acceptance


def record(name, ok, detail):
    ACCEPTANCE.append((name, bool(ok), detail))
    print(f"\n{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, detail


def pretrained_model(cfg, data, pre_epochs, seed=0):
    """Fresh model whose dense layers are pretrained on the training-split frames."""
    tr, _ = split_indices(len(data))
    frames = np.concatenate([data.inputs[tr], data.targets[tr]], axis=1)
    frames = frames.reshape(-1, cfg.frame_rows, cfg.frame_cols)
    dense = pretrain_dense(frames, cfg.feature_dim, OptimConfig(epochs=pre_epochs, batch_size=32, seed=seed))
    model = ModelParams.init(cfg, Rng(seed))
    adopt_dense(model, dense)
    return model


def test_1_gradient_oracle():
    cfg = ModelConfig(4, 4, feature_dim=6, hidden_dim=5, t_in=2, t_out=2, conditioned=True)
    model = ModelParams.init(cfg, Rng(0))
    t0 = time.perf_counter()
    report = grad_check(model, random_batch(cfg, batch=2, seed=1), eps=1e-5, tol=1e-4)
    seconds = time.perf_counter() - t0
    record("1 gradient oracle", report.passed and seconds < 60,
           f"max rel error {report.max_rel_error:.2e} over {report.n_checked} params "
           f"(worst {report.worst_param}{list(report.worst_index)}) in {seconds:.1f}s")


def test_2_lstm_unit_fidelity():
    worst = 0.0
    for case in range(100):
        g = np.random.default_rng(case)
        n_in, n_h = int(g.integers(1, 8)), int(g.integers(1, 8))
        p = LstmParams.zeros(n_in, n_h)
        for arr in p.tensors().values():
            arr[...] = g.uniform(-1, 1, arr.shape)
        x, c, h = g.normal(size=n_in), g.normal(size=n_h), g.uniform(-1, 1, n_h)
        s, _ = lstm_step(p, x, LstmState(c, h))
        rc, rh, _ = reference.lstm_step({k: v.tolist() for k, v in p.tensors().items()},
                                        x.tolist(), c.tolist(), h.tolist())
        worst = max(worst, float(np.max(np.abs(s.c - rc))), float(np.max(np.abs(s.h - rh))))

    p = LstmParams.zeros(3, 4)
    p.b_f[:], p.b_i[:], p.b_o[:] = 50.0, -50.0, 50.0
    state = LstmState(np.array([0.7, -0.3, 2.0, 0.0]), np.zeros(4))
    held = True
    for x in np.random.default_rng(0).normal(size=(50, 3)):
        prev = state.c.copy()
        state, _ = lstm_step(p, x, state)
        held &= bool(np.array_equal(state.c, prev))
    record("2 LSTM unit fidelity", worst < 1e-12 and held,
           f"max deviation from scalar reference {worst:.1e} over 100 cases; memory held 50 steps: {held}")


def test_3_overfit_capacity():
    ds = generate_dataset(WorldSpec(rows=32, cols=32), episodes=1)
    data = dataset_batch(ds)
    cfg = ModelConfig(32, 32, feature_dim=32, hidden_dim=64)
    opt = OptimConfig(learning_rate=1e-2, epochs=500, batch_size=1, freeze_dense=False)
    a, ra = train(ModelParams.init(cfg, Rng(0)), data, opt)
    b, rb = train(ModelParams.init(cfg, Rng(0)), data, opt)
    final = ra.epochs[-1].train_loss
    identical = ra.losses() == rb.losses() and checkpoint_to_bytes(a) == checkpoint_to_bytes(b)
    record("3 overfit capacity", final < 1e-3 and identical,
           f"final loss {final:.2e} after 500 epochs; two seeded runs bit-identical: {identical}")


def test_4_desk_scale_beats_copy_baseline():
    t0 = time.perf_counter()
    ds = generate_dataset(WorldSpec(rows=32, cols=32, noise_sigma=0.0), t_in=5, t_out=5, episodes=1000)
    data = dataset_batch(ds)
    cfg = ModelConfig(32, 32, feature_dim=64, hidden_dim=128)
    model = pretrained_model(cfg, data, pre_epochs=30)
    trained, _ = train(model, data, OptimConfig(epochs=50))
    m = evaluate(trained, data.subset(split_indices(len(data))[1]))
    mean_ratio = m.mean_mse / m.copy_mean
    h1_ratio = m.horizon_mse[0] / m.copy_mse[0]
    minutes = (time.perf_counter() - t0) / 60
    record("4 desk-scale reproduction", mean_ratio <= 0.8 and h1_ratio <= 0.6,
           f"mean MSE {m.mean_mse:.2e} vs copy {m.copy_mean:.2e} (ratio {mean_ratio:.3f}); "
           f"horizon-1 ratio {h1_ratio:.3f}; {minutes:.1f} min")


def test_5_inversion_ablation():
    ds = generate_dataset(WorldSpec(rows=32, cols=32, radius=0.08), episodes=1000)
    coverage = float(np.mean(ds.frames() < 130))
    cfg = ModelConfig(32, 32, feature_dim=64, hidden_dim=128)
    recon = {}
    for invert in (True, False):
        data = dataset_batch(ds, PreprocessConfig(invert=invert))
        model = pretrained_model(cfg, data, pre_epochs=30)
        trained, _ = train(model, data, OptimConfig(epochs=20))
        recon[invert] = evaluate(trained, data.subset(split_indices(len(data))[1])).recon_mse
    record("5 inversion ablation", coverage < 0.03 and recon[True] <= recon[False],
           f"object covers {coverage:.1%} of pixels; reconstruction MSE invert=on {recon[True]:.3e}, "
           f"invert=off {recon[False]:.3e}")


def test_6_conditioning_sensitivity():
    ds = generate_dataset(WorldSpec(rows=32, cols=32, observer="moving"), episodes=500)
    data = dataset_batch(ds)
    cfg = ModelConfig(32, 32, feature_dim=32, hidden_dim=64, conditioned=True)
    model = pretrained_model(cfg, data, pre_epochs=10)
    trained, _ = train(model, data, OptimConfig(epochs=10))
    val = data.subset(split_indices(len(data))[1])
    negated = SequenceBatch(val.inputs, val.targets, -val.actions, val.states)

    def mean_frame(batch):
        return forward(trained, batch).pred.mean(axis=(0, 1))

    base = mean_frame(val)
    same = float(np.sqrt(np.mean((mean_frame(val) - base) ** 2)))
    flipped = float(np.sqrt(np.mean((mean_frame(negated) - base) ** 2)))
    record("6 conditioning sensitivity", same == 0.0 and flipped > 10 * same and flipped > 0,
           f"mean-frame per-pixel L2 delta: true actions re-run {same:.1e}, negated actions {flipped:.2e}")


def test_7_format_stability(tmp_path):
    ds = generate_dataset(WorldSpec(rows=16, cols=16, observer="moving", seed=1), episodes=25)
    write_dataset(tmp_path / "a.fcd", ds)
    write_dataset(tmp_path / "b.fcd", read_dataset(tmp_path / "a.fcd"))
    ds_ok = (tmp_path / "a.fcd").read_bytes() == (tmp_path / "b.fcd").read_bytes()

    model = ModelParams.init(ModelConfig(16, 16, 8, 8, conditioned=True), Rng(2))
    write_checkpoint(tmp_path / "a.fcm", model)
    write_checkpoint(tmp_path / "b.fcm", read_checkpoint(tmp_path / "a.fcm"))
    ck_ok = (tmp_path / "a.fcm").read_bytes() == (tmp_path / "b.fcm").read_bytes()

    img = ds[0].input_frames[0]
    write_pgm(tmp_path / "f.pgm", img)
    raw = (tmp_path / "f.pgm").read_bytes()
    header_ok = raw.startswith(b"P5\n16 16\n255\n") and len(raw) == 13 + 256
    pgm_ok = header_ok and np.array_equal(read_pgm(tmp_path / "f.pgm"), img)
    assert pgm_bytes(np.zeros((1, 2), np.uint8)) == b"P5\n2 1\n255\n\x00\x00"
    magic_ok = raw[:2] == b"P5" and struct.unpack("<4s", (tmp_path / "a.fcd").read_bytes()[:4])[0] == b"FCD1"
    record("7 format stability", ds_ok and ck_ok and pgm_ok and magic_ok,
           f"dataset round trip identical: {ds_ok}; checkpoint: {ck_ok}; PGM header/data conformant: {pgm_ok}")
