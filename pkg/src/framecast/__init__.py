"""Future-frame prediction with an action/state-conditioned peephole LSTM autoencoder."""

from .lstm import LstmParams, LstmState, StepTape, lstm_backward, lstm_forward, lstm_step, lstm_step_backward
from .model import (Conditioning, ModelConfig, ModelParams, SequenceBatch, backward, decode_prediction,
                    decode_reconstruction, embed_frames, encode, forward_loss, predict)
from .numerics import Rng, ShapeError
from .preprocess import PreprocessConfig, dataset_batch, preprocess
from .scene import Dataset, Episode, WorldSpec, generate_dataset, pid_step, render
from .training import OptimConfig, TrainReport, evaluate, grad_check, pretrain_dense, train

__version__ = "0.1.0"
