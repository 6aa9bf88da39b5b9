"""Cross-modal video forgery detection from WiFi CSI and compressed-video motion vectors.

Submodules:
    csi        CSI stream parsing, Hampel denoising, per-frame windowing.
    mvmask     motion-vector sidecars and self-supervised pseudo-masks.
    dataset    frame alignment, motion labels, splits and forgery clip pairing.
    models     human detector, human segmentor, forgery detector, losses, checkpoints.
    training   optimisers, learning-rate schedule and training loops.
    pipeline   gated streaming inference and verdict logs.
    evaluation metrics, throughput, the synthetic benchmark and ablations.
    synth      deterministic synthetic recordings and forgeries.
    config     YAML run configuration.
    cli        the ``crossmask`` command.
"""
from ._accel import HAVE_NUMBA, USE_NUMBA
from .errors import (ConfigError, CrossmaskError, DimensionError, FingerprintError, GroupingError, OrderingError,
                     ParameterError, ParseError, ValidationError)

__version__ = "0.1.0"

__all__ = ["HAVE_NUMBA", "USE_NUMBA", "ConfigError", "CrossmaskError", "DimensionError", "FingerprintError",
           "GroupingError", "OrderingError", "ParameterError", "ParseError", "ValidationError"]
