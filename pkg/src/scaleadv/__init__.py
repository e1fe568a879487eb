"""Scaling attacks and a size-uniformization defense for LiDAR 3D detection datasets."""

__version__ = "0.1.0"

from .attacks import (
    BinDeviation,
    PlanEntry,
    ScalePlan,
    apply_scale_plan,
    attack_loss,
    blind_attack,
    distribution_aware_attack,
    model_aware_attack,
    solve_bin_deviations,
    verify_plan,
)
from .dataset_io import (
    Annotation,
    Calibration,
    Frame,
    FrameRecord,
    dataset_size_distribution,
    load_dataset,
    load_frame,
    read_manifest,
    write_frame,
    write_manifest,
)
from .defense import DefenseConfig, defense_plan, materialize_defense
from .detector import (
    Detection,
    DetectorAdapter,
    ExternalDetector,
    OracleDetector,
    SizePriorDetector,
    detector_from_spec,
)
from .errors import (
    DetectorError,
    EmptyDatasetError,
    NoSolutionError,
    ParseError,
    PlanError,
    ScaleAdvError,
)
from .evaluate import MatchResult, ap_40, asr, evaluate_detector, match_frame, pr_curve, recall
from .geometry import Box3D, PointCloud, box_corners, iou_3d, points_in_box, scale_instance
from .stats import (
    EmpiricalCDF,
    SizeDistribution,
    Uniform,
    build_histogram,
    icdf_map,
    js_divergence,
    sample_from_histogram,
)

__all__ = [name for name in dir() if not name.startswith("_")]
