"""Point Mamba Adapter on a numpy autodiff core."""

from .backbone import Backbone, BackboneConfig, LayerHarvest, dump_features, load_features
from .data import DataError, generate_dataset, load_dataset, save_dataset
from .g2pg import G2PG, assign_unique_indices, g2pg_forward
from .model import PmaConfig, PointMambaAdapter, count_trainable, pma_forward
from .sscan import MambaBlock, selective_scan, zoh_discretize
from .train import ConfigError, NumericError, RunConfig, train

__all__ = [
    "Backbone", "BackboneConfig", "LayerHarvest", "dump_features", "load_features",
    "DataError", "generate_dataset", "load_dataset", "save_dataset",
    "G2PG", "assign_unique_indices", "g2pg_forward",
    "PmaConfig", "PointMambaAdapter", "count_trainable", "pma_forward",
    "MambaBlock", "selective_scan", "zoh_discretize",
    "ConfigError", "NumericError", "RunConfig", "train",
]
