"""Configuration, I/O and experiment orchestration."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .io import EmbeddingTable, emit_plot_data, load_embeddings, save_embeddings
from .run import run

__all__ = ["ConfigError", "EmbeddingTable", "ExperimentConfig", "emit_plot_data", "load_config",
           "load_embeddings", "parse_config", "run", "save_embeddings"]
