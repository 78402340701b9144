"""Binary file formats: datasets (FCD1), model checkpoints (FCM1), and PGM frames.

All integers are little-endian.

Dataset (``FCD1``)::

    b"FCD1"
    u32 rows, cols, t_in, t_out, action_dim, state_dim, episode_count
    per episode:
        u32 trial, start, goal, window
        f64 kp, ki, kd
        u8  frames[(t_in + t_out) * rows * cols]      input frames then targets, row-major
        f64 actions[t_out * action_dim]
        f64 states[t_out * state_dim]

Checkpoint (``FCM1``)::

    b"FCM1"
    u32 frame_rows, frame_cols, feature_dim, hidden_dim, t_in, t_out, action_dim, state_dim
    u32 conditioned, recon_reversed                      (0 or 1)
    u32 tensor_count
    per tensor, in ModelParams.tensors() order:
        u32 rows, cols                                   vectors are stored as (len, 1)
        f64 data[rows * cols]                            row-major

The tensor order is enc_dense.W, enc_dense.b, dec_dense.W, dec_dense.b, then
for each of encoder, recon_decoder, pred_decoder the LSTM fields
W_xi W_xf W_xc W_xo W_hi W_hf W_hc W_ho w_ci w_cf w_co b_i b_f b_c b_o, and
finally head.W, head.b.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParams
from .numerics import ShapeError
from .scene import Dataset, Episode, EpisodeMeta

DATASET_MAGIC = b"FCD1"
CHECKPOINT_MAGIC = b"FCM1"

_DS_HEADER = struct.Struct("<7I")
_EP_META = struct.Struct("<4I3d")
_CK_HEADER = struct.Struct("<10I")
_U32 = struct.Struct("<I")
_DIMS = struct.Struct("<2I")


class FormatError(ValueError):
    """Raised for a bad magic number, truncated file, or inconsistent header."""


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file and rename, so failures leave nothing behind."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_exact(f, n: int, what: str) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise FormatError(f"truncated file while reading {what} (wanted {n} bytes, got {len(b)})")
    return b


# -- datasets ---------------------------------------------------------------

def dataset_to_bytes(ds: Dataset) -> bytes:
    buf = io.BytesIO()
    buf.write(DATASET_MAGIC)
    buf.write(_DS_HEADER.pack(ds.rows, ds.cols, ds.t_in, ds.t_out, ds.action_dim, ds.state_dim, len(ds)))
    frame_shape = (ds.rows, ds.cols)
    for k, ep in enumerate(ds.episodes):
        if ep.input_frames.shape != (ds.t_in, *frame_shape) or ep.target_frames.shape != (ds.t_out, *frame_shape):
            raise ShapeError(f"episode {k} frames do not match dataset header")
        if ep.actions.shape != (ds.t_out, ds.action_dim) or ep.states.shape != (ds.t_out, ds.state_dim):
            raise ShapeError(f"episode {k} actions/states do not match dataset header")
        m = ep.meta
        buf.write(_EP_META.pack(m.trial, m.start, m.goal, m.window, *map(float, m.gains)))
        buf.write(np.ascontiguousarray(ep.input_frames, dtype=np.uint8).tobytes())
        buf.write(np.ascontiguousarray(ep.target_frames, dtype=np.uint8).tobytes())
        buf.write(np.ascontiguousarray(ep.actions, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(ep.states, dtype="<f8").tobytes())
    return buf.getvalue()


def dataset_from_bytes(data: bytes) -> Dataset:
    f = io.BytesIO(data)
    magic = f.read(4)
    if magic != DATASET_MAGIC:
        raise FormatError(f"not a dataset file: magic {magic!r}, expected {DATASET_MAGIC!r}")
    rows, cols, t_in, t_out, a_dim, s_dim, count = _DS_HEADER.unpack(_read_exact(f, _DS_HEADER.size, "header"))
    if min(rows, cols, t_in, t_out) == 0:
        raise FormatError("dataset header has a zero dimension")
    ds = Dataset(rows, cols, t_in, t_out, a_dim, s_dim)
    px = rows * cols
    for k in range(count):
        trial, start, goal, window, kp, ki, kd = _EP_META.unpack(_read_exact(f, _EP_META.size, f"episode {k} meta"))
        frames = np.frombuffer(_read_exact(f, (t_in + t_out) * px, f"episode {k} frames"), dtype=np.uint8)
        frames = frames.reshape(t_in + t_out, rows, cols)
        actions = np.frombuffer(_read_exact(f, 8 * t_out * a_dim, f"episode {k} actions"), dtype="<f8")
        states = np.frombuffer(_read_exact(f, 8 * t_out * s_dim, f"episode {k} states"), dtype="<f8")
        ds.episodes.append(
            Episode(
                frames[:t_in].copy(),
                frames[t_in:].copy(),
                actions.reshape(t_out, a_dim).astype(np.float64),
                states.reshape(t_out, s_dim).astype(np.float64),
                EpisodeMeta(trial, start, goal, window, (kp, ki, kd)),
            )
        )
    if f.read(1):
        raise FormatError("trailing bytes after the last episode")
    return ds


def write_dataset(path, ds: Dataset) -> None:
    atomic_write(path, dataset_to_bytes(ds))


def read_dataset(path) -> Dataset:
    return dataset_from_bytes(Path(path).read_bytes())


# -- checkpoints ------------------------------------------------------------

def checkpoint_to_bytes(p: ModelParams) -> bytes:
    c = p.config
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(_CK_HEADER.pack(c.frame_rows, c.frame_cols, c.feature_dim, c.hidden_dim, c.t_in, c.t_out,
                              c.action_dim, c.state_dim, int(c.conditioned), int(c.recon_reversed)))
    tensors = p.tensors()
    buf.write(_U32.pack(len(tensors)))
    for arr in tensors.values():
        rows, cols = arr.shape if arr.ndim == 2 else (arr.shape[0], 1)
        buf.write(_DIMS.pack(rows, cols))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def checkpoint_from_bytes(data: bytes) -> ModelParams:
    f = io.BytesIO(data)
    magic = f.read(4)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"not a checkpoint file: magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    h = _CK_HEADER.unpack(_read_exact(f, _CK_HEADER.size, "header"))
    if h[8] > 1 or h[9] > 1:
        raise FormatError("checkpoint flags must be 0 or 1")
    try:
        cfg = ModelConfig(*h[:8], conditioned=bool(h[8]), recon_reversed=bool(h[9]))
    except ValueError as e:
        raise FormatError(f"invalid checkpoint header: {e}") from None
    template = ModelParams.zeros(cfg).tensors()
    (count,) = _U32.unpack(_read_exact(f, 4, "tensor count"))
    if count != len(template):
        raise FormatError(f"checkpoint holds {count} tensors, expected {len(template)}")
    tensors = {}
    for name, ref in template.items():
        rows, cols = _DIMS.unpack(_read_exact(f, _DIMS.size, f"{name} dims"))
        want = ref.shape if ref.ndim == 2 else (ref.shape[0], 1)
        if (rows, cols) != want:
            raise FormatError(f"tensor {name} stored as {rows}x{cols}, config implies {want[0]}x{want[1]}")
        raw = np.frombuffer(_read_exact(f, 8 * rows * cols, name), dtype="<f8")
        tensors[name] = raw.astype(np.float64).reshape(ref.shape)
    if f.read(1):
        raise FormatError("trailing bytes after the last tensor")
    return ModelParams.from_tensors(cfg, tensors)


def write_checkpoint(path, p: ModelParams) -> None:
    atomic_write(path, checkpoint_to_bytes(p))


def read_checkpoint(path) -> ModelParams:
    return checkpoint_from_bytes(Path(path).read_bytes())


# -- PGM --------------------------------------------------------------------

def pgm_bytes(img: np.ndarray) -> bytes:
    """Binary (P5) PGM with maxval 255."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ShapeError(f"PGM needs a 2-D image, got shape {img.shape}")
    if img.dtype != np.uint8:
        if img.min() < 0 or img.max() > 255:
            raise ValueError("pixel values outside [0, 255]")
        img = img.astype(np.uint8)
    rows, cols = img.shape
    return b"P5\n%d %d\n255\n" % (cols, rows) + np.ascontiguousarray(img).tobytes()


def write_pgm(path, img: np.ndarray) -> None:
    atomic_write(path, pgm_bytes(img))


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"not a binary PGM: magic {tokens[0]!r}")
    cols, rows, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    body = data[pos:pos + rows * cols]
    if len(body) != rows * cols:
        raise FormatError("truncated PGM raster")
    return np.frombuffer(body, dtype=np.uint8).reshape(rows, cols).copy()


def to_gray(values: np.ndarray) -> np.ndarray:
    """Map reals in [0, 1] to uint8 by rounding ``255 * v`` to nearest (halves up)."""
    return np.clip(np.floor(255.0 * np.asarray(values) + 0.5), 0, 255).astype(np.uint8)
