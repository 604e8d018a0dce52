"""Geometry-guided pseudo-view synthesis and training-data tooling for driving scenes."""

from .degrade import DegradationConfig, TrainingPair, simulate
from .depth_align import (
    ScaleShift,
    SparseDepthSamples,
    dense_depth_loss,
    distortion_loss,
    fit_scale_shift,
    project_lidar,
)
from .geometry import DepthMap, Intrinsics, PixelHomog, Pose, project, unproject
from .segments import LatentShape, SegmentPlan, latent_shape, plan_segments, run_chained
from .synthesis import (
    CorruptionConfig,
    Frame,
    PseudoView,
    Visibility,
    WorldPointCloud,
    build_point_cloud,
    corrupt_geometry,
    sample_visibility,
    synthesize,
)
from .trajectory import ShiftSpec, Trajectory, shift_trajectory

__version__ = "0.1.0"
