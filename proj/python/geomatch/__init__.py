"""Geometric matching: correlation-based transform regression, thin-plate
splines, synthetic training pairs and keypoint-transfer evaluation."""

from ._geomatch import (
    EstimationError,
    GenerationError,
    InvalidArgument,
    IoError,
    Model,
    NumericError,
    UndefinedMetric,
    apply_transform,
    correlate,
    estimate_two_stage,
    generate_pair,
    grid_loss,
    identity,
    normalize_correspondences,
    pck,
    ransac_affine,
    read_png,
    render_procedural_source,
    warp,
    write_png,
)

__all__ = [
    "EstimationError",
    "GenerationError",
    "InvalidArgument",
    "IoError",
    "Model",
    "NumericError",
    "UndefinedMetric",
    "apply_transform",
    "correlate",
    "estimate_two_stage",
    "generate_pair",
    "grid_loss",
    "identity",
    "normalize_correspondences",
    "pck",
    "ransac_affine",
    "read_png",
    "render_procedural_source",
    "warp",
    "write_png",
]
