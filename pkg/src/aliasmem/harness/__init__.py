"""Training, evaluation, probes, ablation variants and run configuration."""

from .config import VARIANTS, RunConfig, load_config, parse_config
from .data import Batch, Chunk, assemble, chunk_sequences, prepare, sample_batch
from .evaluate import eval_seeds, evaluate, rollout
from .metrics import METRIC_COLUMNS, MetricsReport, cohen_kappa, read_metrics, write_metrics
from .model import FrameGeometry, Model, build_variant, frame_geometry
from .probe import ProbeResult, fit_linear_probe, linear_probe, parameter_hash, separation_score
from .train import TrainResult, compute_losses, train

__all__ = [
    "VARIANTS", "RunConfig", "load_config", "parse_config", "Batch", "Chunk", "assemble",
    "chunk_sequences", "prepare", "sample_batch", "eval_seeds", "evaluate", "rollout", "METRIC_COLUMNS",
    "MetricsReport", "cohen_kappa", "read_metrics", "write_metrics", "FrameGeometry", "Model",
    "build_variant", "frame_geometry", "ProbeResult", "fit_linear_probe", "linear_probe", "parameter_hash",
    "separation_score", "TrainResult", "compute_losses", "train",
]
