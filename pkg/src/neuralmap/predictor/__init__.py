"""Per-frame elevation and uncertainty prediction."""
from .baseline import baseline_arrays, baseline_predict
from .loss import ElevationEstimate, ShapeMismatch, beta_nll, l05, total_variation, tv_weights
from .net import GatedNet, predict
from .train import Adam, Dataset, Divergence, TrainConfig, evaluate, mean_loss, train

__all__ = [
    "Adam", "Dataset", "Divergence", "ElevationEstimate", "GatedNet", "ShapeMismatch", "TrainConfig",
    "baseline_arrays", "baseline_predict", "beta_nll", "evaluate", "l05", "mean_loss", "predict",
    "total_variation", "train", "tv_weights",
]
