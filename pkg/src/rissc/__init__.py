"""Stacked-RIS diffractive networks for on-the-air semantic image transmission."""

from .ctensor import CTensor, Tape, backward, grad_check
from .diffraction import Geometry, fly_latency, make_geometry, rs_kernel
from .modem import ModemSpec, demodulate, modulate
from .ris_layers import ConstraintSpec, ModelConfig, SemanticModel, build_model
from .train import TrainConfig, fit, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "CTensor", "Tape", "backward", "grad_check",
    "Geometry", "fly_latency", "make_geometry", "rs_kernel",
    "ModemSpec", "demodulate", "modulate",
    "ConstraintSpec", "ModelConfig", "SemanticModel", "build_model",
    "TrainConfig", "fit", "load_checkpoint", "save_checkpoint",
]
