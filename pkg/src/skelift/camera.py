"""Weak-perspective camera: projection, back-projection from Z/f, 2D pose normalization."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import DegeneratePoseError, GeometryError, ValidationError


@dataclass(frozen=True)
class CameraModel:
    cx: float
    cy: float
    focal: float | None = None

    def __post_init__(self) -> None:
        if self.focal is not None and not self.focal > 0:
            raise ValidationError(f"focal length must be positive, got {self.focal}")

    @classmethod
    def for_image(cls, width: int, height: int, focal: float | None = None) -> CameraModel:
        return cls(width / 2.0, height / 2.0, focal)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    def to_dict(self) -> dict[str, Any]:
        return {"cx": self.cx, "cy": self.cy, "f": self.focal}

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> CameraModel:
        f = doc.get("f")
        return cls(float(doc["cx"]), float(doc["cy"]), None if f is None else float(f))


@dataclass(frozen=True)
class NormalizedPose:
    """Root-centred pose with unit mean joint-to-root distance.

    ``s`` is the divisor that was applied (pixels) and ``c`` the root pixel location.
    """

    p: np.ndarray
    s: float
    c: np.ndarray

    def features(self) -> np.ndarray:
        return np.concatenate([self.p.reshape(-1), self.c, [self.s]])


def project(points: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Camera coordinates (..., 3) to pixels (..., 2): x = f X / Z + c_x."""
    if cam.focal is None:
        raise ValidationError("projection needs a known focal length")
    pts = np.asarray(points, dtype=np.float64)
    z = pts[..., 2]
    if np.any(z <= 0):
        raise GeometryError("point at or behind the camera plane (Z <= 0)")
    x = cam.focal * pts[..., 0] / z + cam.cx
    y = cam.focal * pts[..., 1] / z + cam.cy
    return np.stack([x, y], axis=-1)


def back_project(
    pixels: np.ndarray, rel_depth: np.ndarray | float, center: np.ndarray, focal: float | None = None
) -> np.ndarray:
    """Pixels (..., 2) and Z/f to camera coordinates (..., 3).

    X = (Z/f)(x - c_x), Y = (Z/f)(y - c_y). The third component is Z when
    ``focal`` is given and Z/f otherwise.
    """
    px = np.asarray(pixels, dtype=np.float64)
    d = np.asarray(rel_depth, dtype=np.float64)
    if np.any(d <= 0):
        raise GeometryError("relative depth Z/f must be positive")
    center = np.asarray(center, dtype=np.float64)
    X = d * (px[..., 0] - center[0])
    Y = d * (px[..., 1] - center[1])
    Z = d * focal if focal is not None else d * np.ones_like(X)
    return np.stack([X, Y, Z], axis=-1)


def normalize_pose(joints2d: np.ndarray, root_index: int = 0, eps: float = 1e-9) -> NormalizedPose:
    joints2d = np.asarray(joints2d, dtype=np.float64)
    c = joints2d[root_index].copy()
    rel = joints2d - c
    dist = np.linalg.norm(np.delete(rel, root_index, axis=0), axis=1)
    s = float(dist.mean()) if dist.size else 0.0
    if not s >= eps:
        raise DegeneratePoseError(f"mean joint-to-root distance {s:.3g} is degenerate")
    return NormalizedPose(rel / s, s, c)


def normalize_batch(joints2d: np.ndarray, root_index: int = 0, eps: float = 1e-9):
    """Vectorised ``normalize_pose`` over a leading axis; returns (p, s, c) arrays.

    Degenerate rows get s = nan; callers decide how to handle them.
    """
    joints2d = np.asarray(joints2d, dtype=np.float64)
    c = joints2d[..., root_index, :]
    rel = joints2d - c[..., None, :]
    dist = np.linalg.norm(np.delete(rel, root_index, axis=-2), axis=-1)
    s = dist.mean(axis=-1)
    s = np.where(s >= eps, s, np.nan)
    return rel / s[..., None, None], s, c
