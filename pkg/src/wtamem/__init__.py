"""Deep networks annealed into grouped winner-takes-all associative memories."""
from .activation import (GroupedWTA, GroupSpec, TemperatureSchedule, combination_count, fixed_c,
                         fixed_l, sigma_t, sigma_wta, temperature_at)
from .data import LabeledDataset, load_cifar, make_synthetic, write_cifar
from .estimator import WTANetClassifier
from .model import Model, ModelConfig, build
from .sam import (BLANK, HeteroMemory, SparseAssociativeMemory, SparseMessage, capacity_sweep,
                  memory_new, retrieve, store)
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "BLANK", "GroupSpec", "GroupedWTA", "HeteroMemory", "LabeledDataset", "Model", "ModelConfig",
    "SparseAssociativeMemory", "SparseMessage", "TemperatureSchedule", "TrainConfig",
    "WTANetClassifier", "build", "capacity_sweep", "combination_count", "evaluate", "fixed_c",
    "fixed_l", "load_cifar", "make_synthetic", "memory_new", "retrieve", "sigma_t", "sigma_wta",
    "store", "temperature_at", "train", "write_cifar",
]
