"""``framecast`` command line: gen, pretrain, train, predict, eval, dump.

Exit codes: 0 ok, 1 usage/config error, 2 I/O error, 3 file format error,
4 shape mismatch, 5 training diverged (non-finite loss).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import plots
from .config import FIELD_TYPES, ConfigError, PipelineConfig, resolve
from .formats import (FormatError, atomic_write, pgm_bytes, read_checkpoint, read_dataset, to_gray,
                      write_checkpoint, write_dataset)
from .model import ModelParams, predict
from .numerics import Rng, ShapeError
from .preprocess import dataset_batch
from .scene import Dataset, generate_dataset
from .training import TrainingDiverged, adopt_dense, evaluate, pretrain_dense, split_indices, train

log = logging.getLogger("framecast")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_FORMAT, EXIT_SHAPE, EXIT_DIVERGED = range(6)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _config_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", type=Path, help="key = value configuration file")
    parent.add_argument("-v", "--verbose", action="store_true")
    group = parent.add_argument_group("configuration overrides")
    for key, kind in FIELD_TYPES.items():
        group.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", metavar=kind.upper(),
                           default=None)
    return parent


def build_parser() -> argparse.ArgumentParser:
    parent = _config_flags()
    p = _Parser(prog="framecast", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen", parents=[parent], help="simulate scenes and write a dataset")
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("pretrain", parents=[parent], help="pretrain the dense frame autoencoder")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True, help="checkpoint holding the pretrained dense layers")
    s.add_argument("--report-dir", type=Path)

    s = sub.add_parser("train", parents=[parent], help="train the sequence model")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--init", type=Path, help="starting checkpoint, e.g. from pretrain")
    s.add_argument("--report-dir", type=Path, help="defaults to the checkpoint's directory")

    s = sub.add_parser("predict", parents=[parent], help="write predicted and ground-truth frames as PGM")
    s.add_argument("--model", type=Path, required=True)
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--episode", type=int, default=0)
    s.add_argument("--out-dir", type=Path, required=True)

    s = sub.add_parser("eval", parents=[parent], help="prediction metrics against baselines")
    s.add_argument("--model", type=Path, required=True)
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--split", choices=("val", "all"), default="val")
    s.add_argument("--report-dir", type=Path)

    s = sub.add_parser("dump", parents=[parent], help="export dataset frames as PGM")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--out-dir", type=Path, required=True)
    s.add_argument("--episode", type=int)
    return p


def _resolve(args) -> PipelineConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    cfg = resolve(args.config, overrides)
    log.info("resolved configuration:\n%s", cfg.to_text().rstrip())
    return cfg


def _check_dataset(ds: Dataset, cfg) -> None:
    """``cfg`` is a ModelConfig; the dataset must have the same frame and sequence shape."""
    got = (ds.rows, ds.cols, ds.t_in, ds.t_out, ds.action_dim, ds.state_dim)
    want = (cfg.frame_rows, cfg.frame_cols, cfg.t_in, cfg.t_out, cfg.action_dim, cfg.state_dim)
    if got != want:
        raise ShapeError(
            f"dataset is (rows, cols, t_in, t_out, action_dim, state_dim)={got}, model expects {want}"
        )


def _mkdir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_gen(args, cfg: PipelineConfig) -> None:
    if cfg.trials > 0:
        ds = generate_dataset(cfg.world(), trials=cfg.trials, t_in=cfg.t_in, t_out=cfg.t_out, workers=cfg.workers)
    else:
        ds = generate_dataset(cfg.world(), t_in=cfg.t_in, t_out=cfg.t_out, episodes=cfg.episodes,
                              workers=cfg.workers)
    write_dataset(args.out, ds)
    print(f"wrote {len(ds)} episodes ({len(ds) * ds.t_in} input frames, {ds.rows}x{ds.cols}) to {args.out}")


def cmd_pretrain(args, cfg: PipelineConfig) -> None:
    mcfg = cfg.model()
    ds = read_dataset(args.data)
    _check_dataset(ds, mcfg)
    train_idx, _ = split_indices(len(ds))
    if len(train_idx) == 0:
        raise ValueError("dataset has no training episodes")
    batch = dataset_batch(ds, cfg.preprocess(), train_idx)
    frames = np.concatenate([batch.inputs, batch.targets], axis=1).reshape(-1, ds.rows, ds.cols)
    dense = pretrain_dense(frames, cfg.feature_dim, cfg.pretrain_optim(), cfg.init_scale)
    model = ModelParams.init(mcfg, Rng(cfg.seed), cfg.init_scale, cfg.forget_bias)
    adopt_dense(model, dense)
    if args.report_dir is not None:
        d = _mkdir(args.report_dir)
        lines = ["epoch,loss"] + [f"{e},{loss!r}" for e, loss in enumerate(dense.losses, 1)]
        atomic_write(d / "pretrain_loss.csv", ("\n".join(lines) + "\n").encode())
    write_checkpoint(args.out, model)
    final = dense.losses[-1] if dense.losses else float("nan")
    print(f"pretrained dense layers on {len(frames)} frames; final MSE {final:.6g}; wrote {args.out}")


def cmd_train(args, cfg: PipelineConfig) -> None:
    mcfg = cfg.model()
    ds = read_dataset(args.data)
    _check_dataset(ds, mcfg)
    if args.init is not None:
        model = read_checkpoint(args.init)
        if model.config != mcfg:
            raise ShapeError(f"checkpoint config {model.config} does not match configuration {mcfg}")
    else:
        if cfg.freeze_dense:
            log.warning("training without --init: dense layers stay at their random initialisation")
        model = ModelParams.init(mcfg, Rng(cfg.seed), cfg.init_scale, cfg.forget_bias)
    batch = dataset_batch(ds, cfg.preprocess())
    trained, report = train(model, batch, cfg.optim())
    report_dir = _mkdir(args.report_dir if args.report_dir is not None else args.out.parent)
    atomic_write(report_dir / "report.txt", report.to_text().encode())
    atomic_write(report_dir / "report.csv", report.to_csv().encode())
    atomic_write(report_dir / "horizons.csv", report.horizons_csv().encode())
    plots.loss_curve(report, report_dir / "loss_curve.png")
    write_checkpoint(args.out, trained)
    last = report.epochs[-1] if report.epochs else None
    if last is not None:
        print(f"epoch {last.epoch}: train {last.train_loss:.6g}, val {last.val_loss:.6g}")
    print(f"wrote {args.out} and reports in {report_dir}")


def _load_model_and_data(args):
    model = read_checkpoint(args.model)
    ds = read_dataset(args.data)
    _check_dataset(ds, model.config)
    return model, ds


def cmd_predict(args, cfg: PipelineConfig) -> None:
    model, ds = _load_model_and_data(args)
    if not 0 <= args.episode < len(ds):
        raise ValueError(f"episode {args.episode} out of range (dataset has {len(ds)})")
    batch = dataset_batch(ds, cfg.preprocess(), [args.episode])
    _, pred = predict(model, batch)
    inputs, truth, pred = batch.inputs[0], batch.targets[0], pred[0]

    files = {}
    for k, frame in enumerate(inputs):
        files[f"input_{k}.pgm"] = pgm_bytes(to_gray(frame))
    for k, (p, t) in enumerate(zip(pred, truth), 1):
        files[f"pred_t+{k}.pgm"] = pgm_bytes(to_gray(p))
        files[f"truth_t+{k}.pgm"] = pgm_bytes(to_gray(t))
    # predicted row on top of the ground-truth row
    sheet = np.concatenate([np.concatenate(list(pred), axis=1), np.concatenate(list(truth), axis=1)], axis=0)
    files["side_by_side.pgm"] = pgm_bytes(to_gray(sheet))

    out = _mkdir(args.out_dir)
    for name, data in files.items():
        atomic_write(out / name, data)
    plots.prediction_grid(inputs, pred, truth, out / "prediction_grid.png")
    mse = float(np.mean((pred - truth) ** 2))
    print(f"episode {args.episode}: prediction MSE {mse:.6g}; wrote {len(files)} PGM files to {out}")


def cmd_eval(args, cfg: PipelineConfig) -> None:
    model, ds = _load_model_and_data(args)
    idx = split_indices(len(ds))[1] if args.split == "val" else np.arange(len(ds))
    if len(idx) == 0:
        raise ValueError("no episodes to evaluate (validation split is empty; try --split all)")
    batch = dataset_batch(ds, cfg.preprocess(), idx)
    m = evaluate(model, batch)
    lines = ["horizon,model_mse,copy_last_mse,linear_mse"]
    lines += [f"{h},{a:.8g},{b:.8g},{c:.8g}" for h, a, b, c in m.rows()]
    table = "\n".join(lines) + "\n"
    sys.stdout.write(table)
    print(f"reconstruction_mse,{m.recon_mse:.8g}")
    print(f"episodes,{len(idx)}")
    if args.report_dir is not None:
        d = _mkdir(args.report_dir)
        atomic_write(d / "metrics.csv", table.encode())
        plots.horizon_mse(m, d / "horizon_mse.png")


def cmd_dump(args, cfg: PipelineConfig) -> None:
    ds = read_dataset(args.data)
    indices = range(len(ds)) if args.episode is None else [args.episode]
    files = {}
    for i in indices:
        if not 0 <= i < len(ds):
            raise ValueError(f"episode {i} out of range (dataset has {len(ds)})")
        ep = ds[i]
        for k, f in enumerate(ep.input_frames):
            files[f"ep{i:05d}_in{k}.pgm"] = pgm_bytes(f)
        for k, f in enumerate(ep.target_frames):
            files[f"ep{i:05d}_out{k}.pgm"] = pgm_bytes(f)
    out = _mkdir(args.out_dir)
    for name, data in files.items():
        atomic_write(out / name, data)
    print(f"wrote {len(files)} PGM files to {out}")


COMMANDS = {
    "gen": cmd_gen,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "dump": cmd_dump,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"framecast: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        COMMANDS[args.command](args, cfg)
    except ShapeError as e:
        print(f"framecast: shape mismatch: {e}", file=sys.stderr)
        return EXIT_SHAPE
    except FormatError as e:
        print(f"framecast: format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except TrainingDiverged as e:
        print(f"framecast: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, ValueError) as e:
        print(f"framecast: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"framecast: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
