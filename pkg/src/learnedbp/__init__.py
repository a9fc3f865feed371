"""Photoacoustic-style simulation and backprojection with learned weights.

The package simulates circular-detector pressure data from 2D source
images, reconstructs sources with the (optionally weighted) universal
backprojection, and trains the per-pixel, per-detector weight tensor by
stochastic gradient descent to suppress limited-view, sparse-sampling
and directivity artifacts.
"""

from .errors import (
    ConfigError,
    DivergenceError,
    FormatError,
    LearnedBpError,
    ShapeMismatchError,
)
from .fileio import Dataset, load_scenario_cfg, read_patb, read_pgm, save_scenario_cfg, write_patb, write_pgm
from .forward import ForwardOperator, SensorData, circular_mean, simulate
from .geometry import (
    DetectorArray,
    ImageGrid,
    Scenario,
    TimeGrid,
    directivity,
    make_detectors,
    make_scenario,
)
from .metrics import EvalReport, diff_image, evaluate, rel_error
from .phantoms import Image, PhantomParams, elastic_deform, generate_phantom, rasterize_ellipses
from .recon import (
    BackprojectionOperator,
    ContribTensor,
    WeightTensor,
    backproject_contrib,
    singular_integral,
    time_filter,
    weighted_ubp,
)
from .training import TrainConfig, TrainState, grad, loss, sgd_train

__version__ = "0.1.0"

__all__ = [
    "BackprojectionOperator",
    "ConfigError",
    "ContribTensor",
    "Dataset",
    "DetectorArray",
    "DivergenceError",
    "EvalReport",
    "FormatError",
    "ForwardOperator",
    "Image",
    "ImageGrid",
    "LearnedBpError",
    "PhantomParams",
    "Scenario",
    "SensorData",
    "ShapeMismatchError",
    "TimeGrid",
    "TrainConfig",
    "TrainState",
    "WeightTensor",
    "backproject_contrib",
    "circular_mean",
    "diff_image",
    "directivity",
    "elastic_deform",
    "evaluate",
    "generate_phantom",
    "grad",
    "load_scenario_cfg",
    "loss",
    "make_detectors",
    "make_scenario",
    "rasterize_ellipses",
    "read_patb",
    "read_pgm",
    "rel_error",
    "save_scenario_cfg",
    "sgd_train",
    "simulate",
    "singular_integral",
    "time_filter",
    "weighted_ubp",
    "write_patb",
    "write_pgm",
]
