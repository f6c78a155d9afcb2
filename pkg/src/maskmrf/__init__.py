"""Soft-mask guided patch-MRF style synthesis over CNN features.

Submodules:
    tensor     dense (H, W, C) float arrays and bilinear resampling
    features   configurable conv/relu/pool network, forward and backward
    masks      soft semantic masks: rescaling, skin rule, facial parts
    mrf        patch extraction, NCC nearest neighbours, energy terms
    optimizer  L-BFGS and the multi-resolution synthesis loop
    formats    file formats (.mmw, .mmt, PNG, manifests, landmarks, CSV)
    cli        command line front end
"""

from maskmrf.tensor import as_tensor, resample_bilinear, sum_squares
from maskmrf.features import FeatureNetwork, LayerSpec
from maskmrf.masks import SoftMaskSet
from maskmrf.optimizer import SynthesisConfig, synthesize

__all__ = [
    "as_tensor",
    "resample_bilinear",
    "sum_squares",
    "FeatureNetwork",
    "LayerSpec",
    "SoftMaskSet",
    "SynthesisConfig",
    "synthesize",
]

__version__ = "0.1.0"
