"""Desk-scale pixel labeling of multi-channel volumes.

The package covers the whole pipeline: synthetic echo-decay phantoms, a
bit-exact volume container, PCA channel reduction, a from-scratch fully
convolutional network with skip fusion and masked-loss training, classical
baselines, and segmentation metrics. The ``mcseg`` CLI exposes every step.
"""

import os as _os

# MCSEG_THREADS caps BLAS parallelism. It must be applied before numpy
# loads its backend, hence before any submodule import below.
if "MCSEG_THREADS" in _os.environ:
    _threads = _os.environ["MCSEG_THREADS"]
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"

from . import errors  # noqa: E402
from .volume import (  # noqa: E402
    LabelMap,
    MultiChannelVolume,
    load_labels,
    load_volume,
    save_labels,
    save_volume,
)
from .phantom import PhantomSpec, generate_phantom, ignore_boundary  # noqa: E402
from .pca import PcaModel, explained_ratio, fit_pca, flatten, normalize_0_255, transform  # noqa: E402
from .fcn import Network, NetworkConfig, build_fcn, config_from_preset  # noqa: E402
from .trainer import LossMode, Strategy, TrainConfig, masked_cross_entropy, predict, train  # noqa: E402
from .baselines import MedianModel, fit_medians, fuzzy_cmeans, knn_classify, knn_segment  # noqa: E402
from .metrics import ConfusionMatrix, compute_metrics, confusion, main_tissue_metrics  # noqa: E402

__all__ = [
    "errors",
    "LabelMap",
    "MultiChannelVolume",
    "load_labels",
    "load_volume",
    "save_labels",
    "save_volume",
    "PhantomSpec",
    "generate_phantom",
    "ignore_boundary",
    "PcaModel",
    "explained_ratio",
    "fit_pca",
    "flatten",
    "normalize_0_255",
    "transform",
    "Network",
    "NetworkConfig",
    "build_fcn",
    "config_from_preset",
    "LossMode",
    "Strategy",
    "TrainConfig",
    "masked_cross_entropy",
    "predict",
    "train",
    "MedianModel",
    "fit_medians",
    "fuzzy_cmeans",
    "knn_classify",
    "knn_segment",
    "ConfusionMatrix",
    "compute_metrics",
    "confusion",
    "main_tissue_metrics",
    "__version__",
]
