"""Social-influence behavior prediction on sampled ego networks.

Building blocks: graph storage and classical algorithms (``graph_core``),
fixed-size ego sampling (``ego_sampler``), feature assembly and embedding
pretraining (``feature_builder``), spectral feature smoothing
(``spectral_filter``), the attention + hierarchical-pooling model
(``diffuse_gnn``), training/metrics (``train_eval``), measurement and
synthesis (``analytics``), and the command line (``cli``).
"""

from . import (analytics, autodiff, cli, diffuse_gnn, ego_sampler,
               feature_builder, graph_core, spectral_filter, train_eval)

__all__ = [
    "analytics",
    "autodiff",
    "cli",
    "diffuse_gnn",
    "ego_sampler",
    "feature_builder",
    "graph_core",
    "spectral_filter",
    "train_eval",
]

__version__ = "0.1.0"
