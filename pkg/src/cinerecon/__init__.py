"""Unsupervised multi-coil cine MRI reconstruction on a laptop.

Fully encoded training references are synthesised by merging the frames of
a time-interleaved undersampled acquisition; a per-coil unrolled network
plus a coil-combination CNN is trained on retrospectively undersampled
copies and evaluated frame by frame against zero-filling and L+S.
"""

from .encoding import (
    CoilSensitivities,
    EncodingConfig,
    SamplingMask,
    adjoint_encode,
    encode,
    make_gaussian_random_mask,
    make_uniform_interleaved_mask,
    simulate_coil_sensitivities,
)
from .network import ModelConfig, model_forward
from .training import TrainConfig, train

__version__ = "0.1.0"
