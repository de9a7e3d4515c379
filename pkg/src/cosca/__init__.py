"""Unsupervised domain adaptation on small tabular problems.

Two classifiers on a shared feature generator are trained adversarially on
their disagreement, with optional MMD and pair-contrastive alignment of
source and target features. Everything runs on a small reverse-mode
autodiff engine over numpy.
"""
from .autodiff import Tape, Tensor, detach
from .data import Dataset, gen_gaussian_blobs_shift, gen_two_moons_shift, standardize
from .kernels import BACKEND as KERNEL_BACKEND
from .models import ArchitectureSpec, ModelTriple, Optimizer, init_model
from .trainer import VARIANTS, TrainConfig, evaluate, omega, train

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec",
    "Dataset",
    "KERNEL_BACKEND",
    "ModelTriple",
    "Optimizer",
    "Tape",
    "Tensor",
    "TrainConfig",
    "VARIANTS",
    "detach",
    "evaluate",
    "gen_gaussian_blobs_shift",
    "gen_two_moons_shift",
    "init_model",
    "omega",
    "standardize",
    "train",
]
