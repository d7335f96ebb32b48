"""Vector quantization with usage-gated online codebook reinitialization."""

from .codebook import Codebook, FeatureBatch, QuantizeResult, init_codebook, perplexity, quantize, usage_fraction
from .config import ExperimentConfig, load_config, parse_config, serialize
from .losses import LossBreakdown, contrastive_loss, straight_through, vq_loss
from .numeric import Rng, pairwise_cos_dist, pairwise_sq_dist
from .policies import PolicyConfig, Quantizer, StepReport, decay_alpha, reinit_entries, sample_anchors, update_usage
from .stream import StreamConfig, lloyd_kmeans, new_stream

__version__ = "0.1.0"

__all__ = [
    "Codebook", "FeatureBatch", "QuantizeResult", "init_codebook", "perplexity", "quantize", "usage_fraction",
    "ExperimentConfig", "load_config", "parse_config", "serialize",
    "LossBreakdown", "contrastive_loss", "straight_through", "vq_loss",
    "Rng", "pairwise_cos_dist", "pairwise_sq_dist",
    "PolicyConfig", "Quantizer", "StepReport", "decay_alpha", "reinit_entries", "sample_anchors", "update_usage",
    "StreamConfig", "lloyd_kmeans", "new_stream",
]
