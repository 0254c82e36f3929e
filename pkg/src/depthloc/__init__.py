"""Depth versus feature locality: networks, kernels, and experiment harness."""

from .datasets import Dataset, LabelRule, make_dataset, read_dataset, write_dataset
from .ising import IsingTask, build_ising_dataset
from .mlp import DivergenceError, NetConfig, TrainConfig, train_to_zero_error
from .ntk import KernelModel, NtkSpec, ntk_fit, ntk_value
from .seeding import derive_seed, rng_from

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DivergenceError",
    "IsingTask",
    "KernelModel",
    "LabelRule",
    "NetConfig",
    "NtkSpec",
    "TrainConfig",
    "build_ising_dataset",
    "derive_seed",
    "make_dataset",
    "ntk_fit",
    "ntk_value",
    "read_dataset",
    "rng_from",
    "train_to_zero_error",
    "write_dataset",
    "__version__",
]
