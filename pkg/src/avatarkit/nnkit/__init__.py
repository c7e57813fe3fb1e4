from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .encoding import FrequencyEncoding, HashGridEncoding, HashGridSpec, RawEncoding, freq_encode, hashgrid_encode
from .mlp import Mlp, make_encoding
from .optim import Adam, AdamState, adam_step
from .robust import barron_robust

__all__ = [
    "ad", "Tensor", "no_grad", "load_checkpoint", "save_checkpoint", "FrequencyEncoding",
    "HashGridEncoding", "HashGridSpec", "RawEncoding", "freq_encode", "hashgrid_encode", "Mlp",
    "make_encoding", "Adam", "AdamState", "adam_step", "barron_robust",
]
