"""Checked dense linear algebra, activations and seeded randomness.

Matrices are plain 2-D ``float64`` numpy arrays (row-major); vectors are
1-D arrays.  The helpers here exist to make shape errors loud: nothing in
this module broadcasts implicitly except the documented row-wise bias add
in :func:`affine`.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes do not line up."""


def as_tensor(values, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    t = np.array(values, dtype=DTYPE)
    if t.ndim == 1 and rows is not None and cols is not None:
        t = t.reshape(rows, cols)
    if t.ndim != 2:
        raise ShapeError(f"expected a 2-D tensor, got shape {t.shape}")
    return t


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul dimension mismatch: ({a.shape[0]}x{a.shape[1]}) x "
            f"({b.shape[0]}x{b.shape[1]})"
        )
    return a @ b


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"add shape mismatch: {np.shape(a)} vs {np.shape(b)}")
    return np.add(a, b, dtype=DTYPE)


def affine(weight: np.ndarray, x: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Return ``weight @ x + bias`` for a vector ``x`` or a batch of row vectors.

    ``x`` has shape ``(in,)`` or ``(batch, in)``; ``weight`` is ``(out, in)``
    and ``bias`` is ``(out,)``.  The bias is added to every row.
    """
    out_dim, in_dim = weight.shape
    if x.shape[-1] != in_dim:
        raise ShapeError(
            f"affine input mismatch: weight ({out_dim}x{in_dim}) applied to {x.shape}"
        )
    y = x @ weight.T
    if bias is not None:
        if bias.shape != (out_dim,):
            raise ShapeError(f"bias shape {bias.shape} does not match output dim {out_dim}")
        y = y + bias
    return y


def _float(x) -> np.ndarray:
    # keep wider float types (np.longdouble is used by the gradient checker)
    x = np.asarray(x)
    return x if x.dtype.kind == "f" and x.dtype.itemsize >= 8 else x.astype(DTYPE)


def sigmoid(x) -> np.ndarray:
    # branch on sign so exp never sees a large positive argument
    x = _float(x)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def tanh(x) -> np.ndarray:
    return np.tanh(_float(x))


class Rng:
    """Seedable generator; identical seeds give identical draw sequences.

    Backed by numpy's PCG64, whose output stream is specified bit-for-bit
    and does not depend on platform.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @classmethod
    def derived(cls, seed: int, *keys: int) -> "Rng":
        """Independent stream for ``(seed, *keys)``, e.g. one per simulation trial."""
        rng = cls.__new__(cls)
        rng.seed = int(seed)
        ss = np.random.SeedSequence([int(seed), *map(int, keys)])
        rng._gen = np.random.Generator(np.random.PCG64(ss))
        return rng

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, lo: float, hi: float, size=None):
        return self._gen.uniform(lo, hi, size)

    def normal(self, scale: float, size=None):
        return self._gen.normal(0.0, scale, size)

    def integers(self, n: int) -> int:
        return int(self._gen.integers(n))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def rand_uniform(rng: Rng, rows: int, cols: int, lo: float, hi: float) -> np.ndarray:
    if not lo < hi:
        raise ValueError(f"rand_uniform needs lo < hi, got lo={lo}, hi={hi}")
    return rng.uniform(lo, hi, size=(rows, cols)).astype(DTYPE, copy=False)
