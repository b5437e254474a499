"""Orthographic viewpoints orbiting the +y axis.

Camera frame: x right, y up, z towards the viewer. A viewpoint at azimuth
``a`` sees the world rotated by ``R_y(a)``, so the front view (``a = 0``)
looks down world -z and the view at ``a + b`` equals the view at ``a`` of the
mesh pre-rotated by ``b``. With this convention world +x faces the viewer at
azimuth ``-pi/2`` (world -x at ``+pi/2``).

Screen space is in pixels with the origin at the top-left image corner and
y pointing down; pixel ``(r, c)`` has its center at ``(c + 0.5, r + 0.5)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

CANONICAL_AZIMUTHS = (0.0, math.pi / 4, math.pi / 2, math.pi, 3 * math.pi / 2, 7 * math.pi / 4)
CANONICAL_NAMES = ("front", "front_left", "left", "back", "right", "front_right")
MIN_RESOLUTION = 16
DEFAULT_HALF_EXTENT = 0.55
DEFAULT_CAMERA_DISTANCE = 2.0


def rotation_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


@dataclass(frozen=True)
class Viewpoint:
    azimuth: float = 0.0
    elevation: float = 0.0
    half_extent: float = DEFAULT_HALF_EXTENT
    resolution: int = 256
    distance: float = DEFAULT_CAMERA_DISTANCE

    @property
    def rotation(self) -> np.ndarray:
        """World-to-camera rotation."""
        return rotation_x(self.elevation) @ rotation_y(self.azimuth)

    @property
    def pixel_scale(self) -> float:
        """Pixels per model unit."""
        return self.resolution / (2.0 * self.half_extent)

    def to_camera(self, points):
        return np.asarray(points, dtype=np.float64) @ self.rotation.T

    def project(self, points):
        """Return ``(..., 3)`` array of screen x, screen y (pixels) and depth."""
        cam = self.to_camera(points)
        k = self.pixel_scale
        out = np.empty(cam.shape)
        out[..., 0] = (cam[..., 0] + self.half_extent) * k
        out[..., 1] = (self.half_extent - cam[..., 1]) * k
        out[..., 2] = self.distance - cam[..., 2]
        return out

    def screen_jacobian(self) -> np.ndarray:
        """``d(screen x, screen y) / d(world xyz)``, constant for orthographic views."""
        r = self.rotation
        k = self.pixel_scale
        return np.stack([k * r[0], -k * r[1]])

    def camera_space_normal(self, normals):
        n = self.to_camera(normals)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def to_dict(self):
        return {"azimuth": self.azimuth, "elevation": self.elevation,
                "half_extent": self.half_extent, "resolution": self.resolution,
                "distance": self.distance}


def project(viewpoint: Viewpoint, point):
    x, y, d = viewpoint.project(np.asarray(point, dtype=np.float64))
    return float(x), float(y), float(d)


def camera_space_normal(viewpoint: Viewpoint, normal):
    return viewpoint.camera_space_normal(np.asarray(normal, dtype=np.float64))


@dataclass(frozen=True)
class ViewSet:
    views: tuple
    resolution: int

    def __len__(self):
        return len(self.views)

    def __iter__(self):
        return iter(self.views)

    def __getitem__(self, i):
        return self.views[i]

    @property
    def azimuths(self):
        return [v.azimuth for v in self.views]


def canonical_viewset(resolution: int = 256, half_extent: float = DEFAULT_HALF_EXTENT) -> ViewSet:
    """The six azimuthal views: front, front-left, left, back, right, front-right."""
    if int(resolution) != resolution or resolution < MIN_RESOLUTION:
        raise ConfigError(f"resolution must be an integer >= {MIN_RESOLUTION}, got {resolution}")
    resolution = int(resolution)
    views = tuple(Viewpoint(a, 0.0, half_extent, resolution) for a in CANONICAL_AZIMUTHS)
    return ViewSet(views, resolution)


def is_canonical(azimuths, tol: float = 1e-9) -> bool:
    if len(azimuths) != len(CANONICAL_AZIMUTHS):
        return False
    return all(abs(float(a) - b) <= tol for a, b in zip(azimuths, CANONICAL_AZIMUTHS))
