"""trainer-shim: reference consumer proving the packed-sequence format and
mask semantics in a real forward/backward pass."""

from .checks import LayoutMismatch, doc_logit_difference, isolation_check, pad_embedding_gradient
from .data import Batch, PackedFileError, attention_bias, load_packed, read_records
from .model import TinyCausalTransformer, ToyModelConfig, masked_next_token_loss
from .train import Diverged, smoke_train

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "PackedFileError",
    "load_packed",
    "read_records",
    "attention_bias",
    "ToyModelConfig",
    "TinyCausalTransformer",
    "masked_next_token_loss",
    "isolation_check",
    "doc_logit_difference",
    "pad_embedding_gradient",
    "LayoutMismatch",
    "Diverged",
    "smoke_train",
    "__version__",
]
