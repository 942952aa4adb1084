"""Line-feature SLAM for 2D laser scans.

Modules:

* :mod:`geometry` lines, poses, least-squares fits and frame transforms
* :mod:`simulator` deterministic lidar simulation and file formats
* :mod:`extraction` SW/SM/LT/SR segmentation and odds-ratio merging
* :mod:`segments` occupied/free interval evidence and match probability
* :mod:`association` SCT, JCBB and segment validation
* :mod:`sam` factor graph smoothing and mapping
* :mod:`slam` the end-to-end pipeline
* :mod:`bench` extraction metrics and the door/wall clutter trial
"""

from .errors import (
    ConfigError,
    DegenerateCluster,
    FrameMismatch,
    GridTooCoarse,
    IndeterminateSystem,
    LinemapsError,
    NoClusters,
    SamplingExhausted,
    SingularHessian,
    SingularInnovation,
)
from .geometry import LineFit, LineParams, Pose2, fit_line, project_onto_line, transform_line_to_frame, wrap_angle
from .extraction import ExtractorConfig, Method, evidence_ratio_oracle, extract, initial_segmentation, odds_ratio, ort_merge
from .segments import Interval, SegmentSet, extract_free_segments, extract_segments, geometric_match_prob, intersection_length, merge_segment_evidence
from .association import jcbb, nis, single_compat
from .sam import FactorGraph, incremental_update, marginal_covariance, measurement_model, motion_model, solve
from .slam import LineSlam, SlamConfig, run_slam

__version__ = "0.1.0"
