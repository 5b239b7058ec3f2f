"""Deep-dimple segmentation of SEM fractographs with a numpy autodiff stack."""

from .autodiff import Tensor, backward, no_grad
from .models import ModelSpec, build_model, build_proposed, build_unet, param_count
from .training import TrainConfig, evaluate, fit

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "no_grad", "ModelSpec", "build_model", "build_proposed", "build_unet",
    "param_count", "TrainConfig", "evaluate", "fit",
]
