"""Multi-modal manipulation detection and grounding on a numpy autodiff core."""
from .config import ConfigError, InputError, ModelConfig, load_config, save_config, tiny_config
from .data import GeneratorConfig, Sample, generate, read_dataset, split, write_dataset
from .metrics import MetricReport, PredictionRecord, compute_report
from .model import ManipulationModel, ModelOutput
from .tensor import DimensionError, GraphError, Tensor

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DimensionError", "GeneratorConfig", "GraphError", "InputError", "ManipulationModel",
    "MetricReport", "ModelConfig", "ModelOutput", "PredictionRecord", "Sample", "Tensor", "compute_report",
    "generate", "load_config", "read_dataset", "save_config", "split", "tiny_config", "write_dataset",
]
