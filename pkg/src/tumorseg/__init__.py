"""Brain-tumor segmentation pipeline stages outside of network training.

Pre-processing, label/region algebra, threshold decoding, connected-component
post-processing, losses with analytic gradients and lesion-wise metrics.
"""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .volume import BinaryMask, GridShape, LabelVolume, ScalarVolume, percentile  # noqa: F401
from .nifti import read_nifti, write_nifti  # noqa: F401
from .labels import (  # noqa: F401
    RegionProbs,
    RegionSet,
    Thresholds,
    labels_to_regions,
    regions_to_labels,
    threshold_cascade,
)
from .postprocess import PostprocessParams, postprocess_prediction, clean_ground_truth  # noqa: F401
from .metrics import LesionMatchParams, evaluate_case  # noqa: F401
