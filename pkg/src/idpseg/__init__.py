"""Phase contrast cell segmentation by low-rank background subtraction
and inverse diffraction pattern filtering."""

from idpseg.core import DataError, ImageSequence, load_sequence, stack, unstack
from idpseg.gfl import EdgeWeights, GflParams, gfl_norm, gfl_prox, neighbor_weights
from idpseg.lowrank import AlmParams, Decomposition, decompose, svt
from idpseg.optics import (
    FrequencyFilter,
    KernelBank,
    OpticsParams,
    convolve_freq,
    inverse_filter,
    obscured_airy,
    psf,
    psf_bank,
)

__version__ = "0.1.0"

__all__ = [
    "AlmParams",
    "DataError",
    "Decomposition",
    "EdgeWeights",
    "FrequencyFilter",
    "GflParams",
    "ImageSequence",
    "KernelBank",
    "OpticsParams",
    "convolve_freq",
    "decompose",
    "gfl_norm",
    "gfl_prox",
    "inverse_filter",
    "load_sequence",
    "neighbor_weights",
    "obscured_airy",
    "psf",
    "psf_bank",
    "stack",
    "svt",
    "unstack",
]
