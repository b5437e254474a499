"""Mesh refinement against multi-view normal maps.

A coarse triangle mesh is fitted to target normal images and foreground masks
from six fixed views by gradient descent through a differentiable rasterizer,
with adaptive remeshing after every step.
"""

from .camera import ViewSet, Viewpoint, canonical_viewset
from .errors import ConfigError, DataError, MeshError, MeshRefineError, NumericalError, StageError
from .geometry import Mesh, load_obj, normalize, save_obj
from .loss import LossReport, TargetViews, total_loss
from .optimize import RefineConfig, RunLog, chamfer_distance, normal_consistency, refine
from .raster import rasterize
from .remesh import OptimState, RemeshParams, remesh_pass

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "LossReport", "Mesh", "MeshError", "MeshRefineError",
    "NumericalError", "OptimState", "RefineConfig", "RemeshParams", "RunLog", "StageError",
    "TargetViews", "ViewSet", "Viewpoint", "canonical_viewset", "chamfer_distance", "load_obj",
    "normal_consistency", "normalize", "rasterize", "refine", "remesh_pass", "save_obj",
    "total_loss",
]
