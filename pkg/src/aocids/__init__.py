"""Online intrusion detection with a contrastive autoencoder and pseudo-label self-training."""
from .adm import ArchitectureSpec, Autoencoder, build_autoencoder, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config, preset
from .data import FeatureMatrix, Preprocessor, generate_synthetic
from .metrics import compute_metrics
from .online import OnlineIDS, StreamState, run_stream

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec", "Autoencoder", "ExperimentConfig", "FeatureMatrix", "OnlineIDS",
    "Preprocessor", "StreamState", "build_autoencoder", "compute_metrics", "generate_synthetic",
    "load_checkpoint", "load_config", "preset", "run_stream", "save_checkpoint",
]
