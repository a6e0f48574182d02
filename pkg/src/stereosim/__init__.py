"""Active-stereo depth sensor simulation: procedural scenes, census SGM, metrics."""

import numba as _numba

# TBB shipped in some images is too old for numba; prefer OpenMP.
_numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from .core import (  # noqa: E402
    DepthConversionParams,
    DepthMap,
    DisparityMap,
    ImageGray,
    ImageRGB,
    ShapeMismatchError,
    StereoRig,
    StereoSimError,
    ValidationError,
    depth_to_disparity,
    disparity_to_depth,
    to_grayscale,
)
from .refine import MatchConfig, RefineParams, match_stereo  # noqa: E402
from .sgm import SgmParams  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "DepthConversionParams",
    "DepthMap",
    "DisparityMap",
    "ImageGray",
    "ImageRGB",
    "MatchConfig",
    "RefineParams",
    "SgmParams",
    "ShapeMismatchError",
    "StereoRig",
    "StereoSimError",
    "ValidationError",
    "depth_to_disparity",
    "disparity_to_depth",
    "match_stereo",
    "to_grayscale",
]
