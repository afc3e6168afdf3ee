"""Desk-scale 1-D convolutional CTC speech recognition with swappable
skip-connectivity (plain, residual, highway, dense)."""

from .blocks import BlockConfig, ConnectivityKind
from .ctc import Alphabet, LabelSequence, ctc_brute_force, ctc_loss, greedy_decode
from .model import AcousticModel, ModelConfig, build_model, load_checkpoint, save_checkpoint
from .tensor import Tensor, backward, grad_check, no_grad

__version__ = "0.1.0"

__all__ = [
    "Alphabet",
    "AcousticModel",
    "BlockConfig",
    "ConnectivityKind",
    "LabelSequence",
    "ModelConfig",
    "Tensor",
    "backward",
    "build_model",
    "ctc_brute_force",
    "ctc_loss",
    "grad_check",
    "greedy_decode",
    "load_checkpoint",
    "no_grad",
    "save_checkpoint",
    "__version__",
]
