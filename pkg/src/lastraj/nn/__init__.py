"""Small reverse-mode autodiff and the generator/discriminator built on it."""

from .autodiff import Tape, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (
    ParamSet,
    attention_fuse,
    bilstm_encode,
    gumbel_softmax,
    lstm_cell,
    spectral_normalize,
)
from .models import Discriminator, Generator, ItemMeta, ModelConfig, build_models
from .optim import Adam, adam_step
