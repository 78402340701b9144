"""Frame preprocessing: Gaussian smoothing, intensity inversion, scaling to [0, 1]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .model import SequenceBatch
from .scene import Dataset


@dataclass(frozen=True)
class PreprocessConfig:
    gaussian_sigma: float = 1.0
    invert: bool = True
    scale_to_unit: bool = True

    def __post_init__(self):
        if self.gaussian_sigma < 0:
            raise ValueError(f"gaussian_sigma must be >= 0, got {self.gaussian_sigma}")


def preprocess(frames: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Blur, optionally invert (I <- 255 - I), optionally scale by 1/255.

    Accepts one ``(rows, cols)`` frame or any stack ``(..., rows, cols)``;
    each frame is filtered independently.  The blur kernel is truncated at
    3 sigma and frames are padded by mirror reflection, which keeps the mean
    intensity unchanged.
    """
    if cfg.gaussian_sigma < 0:
        raise ValueError(f"gaussian_sigma must be >= 0, got {cfg.gaussian_sigma}")
    img = np.asarray(frames, dtype=np.float64)
    if cfg.gaussian_sigma > 0:
        sigma = (0.0,) * (img.ndim - 2) + (cfg.gaussian_sigma, cfg.gaussian_sigma)
        img = gaussian_filter(img, sigma=sigma, mode="reflect", truncate=3.0)
    if cfg.invert:
        img = 255.0 - img
    if cfg.scale_to_unit:
        img = img / 255.0
    return img


def dataset_batch(ds: Dataset, cfg: PreprocessConfig = PreprocessConfig(), indices=None) -> SequenceBatch:
    """Preprocess (a subset of) a dataset into one model-ready batch."""
    eps = ds.episodes if indices is None else [ds.episodes[i] for i in indices]
    if not eps:
        return SequenceBatch(
            np.zeros((0, ds.t_in, ds.rows, ds.cols)), np.zeros((0, ds.t_out, ds.rows, ds.cols)),
            np.zeros((0, ds.t_out, ds.action_dim)), np.zeros((0, ds.t_out, ds.state_dim)),
        )
    return SequenceBatch(
        preprocess(np.stack([e.input_frames for e in eps]), cfg),
        preprocess(np.stack([e.target_frames for e in eps]), cfg),
        np.stack([e.actions for e in eps]).astype(np.float64),
        np.stack([e.states for e in eps]).astype(np.float64),
    )
