"""Hybrid acoustic echo and noise reduction: Kalman echo canceller plus a
low-complexity mask-estimating post-filter with latent time alignment."""

from .features import ReorientLayout, compress, decompress, reorient_backward, reorient_forward, reorient_inverse
from .kalman import KalmanConfig, kf_init, kf_process, kf_process_frame
from .model import Model, ModelConfig, apply_mask, macs_per_second, param_count
from .pipeline import Pipeline, PipelineConfig
from .stft import StftConfig, analyze, synthesize
from .time_align import TaWeights, ta_backward, ta_forward
from .weights import WeightStore

__version__ = "0.1.0"
