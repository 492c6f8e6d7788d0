from soelab._backend import BACKEND, HAVE_NUMBA
from soelab.kernels.dynamics import bicycle_step, idm
from soelab.kernels.geometry import (
    any_overlap,
    max_abs_curvature,
    min_ttc,
    obb_overlap,
    overlap_matrix,
    point_at,
    pose_at,
    project,
    wrap_angle,
)

__all__ = [
    "BACKEND",
    "HAVE_NUMBA",
    "any_overlap",
    "bicycle_step",
    "idm",
    "max_abs_curvature",
    "min_ttc",
    "obb_overlap",
    "overlap_matrix",
    "point_at",
    "pose_at",
    "project",
    "wrap_angle",
]
