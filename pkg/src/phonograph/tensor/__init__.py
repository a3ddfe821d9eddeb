from phonograph.tensor import ops
from phonograph.tensor.core import Tape, Tensor, as_tensor, backward, grad_enabled, no_grad
from phonograph.tensor.gradcheck import GradcheckReport, gradcheck
from phonograph.tensor.io import TensorFormatError
from phonograph.tensor.io import load as load_tensor
from phonograph.tensor.io import save as save_tensor
from phonograph.tensor.ops import ShapeError

__all__ = [
    "GradcheckReport",
    "ShapeError",
    "Tape",
    "Tensor",
    "TensorFormatError",
    "as_tensor",
    "backward",
    "grad_enabled",
    "gradcheck",
    "load_tensor",
    "no_grad",
    "ops",
    "save_tensor",
]
