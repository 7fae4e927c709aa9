"""Very deep convolutional networks for character-level text classification."""

from .autodiff import Parameter, Tape, Tensor, backward, grad_check, precision, set_precision
from .model import ArchSpec, VDCNN, build, count_params, depth_of
from .ops import PoolKind
from .text import VOCAB, Dataset, Sample, encode, load_csv

__all__ = [
    "ArchSpec", "Dataset", "Parameter", "PoolKind", "Sample", "Tape", "Tensor", "VDCNN", "VOCAB",
    "backward", "build", "count_params", "depth_of", "encode", "grad_check", "load_csv",
    "precision", "set_precision",
]
