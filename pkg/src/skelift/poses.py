from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError

PERSON = "person"
CAMERA = "camera"


@dataclass(frozen=True)
class ObservedPose2D:
    """One person's 2D detection: pixel joints, heatmap-peak and PAF confidences."""

    joints2d: np.ndarray
    joint_conf: np.ndarray
    bone_conf: np.ndarray

    def __post_init__(self) -> None:
        j = np.asarray(self.joints2d, dtype=np.float64)
        if j.ndim != 2 or j.shape[1] != 2:
            raise ShapeError(f"joints2d must be (n, 2), got {j.shape}")
        if not np.all(np.isfinite(j)):
            raise ValidationError("joints2d contains non-finite coordinates")
        jc = np.clip(np.asarray(self.joint_conf, dtype=np.float64), 0.0, 1.0)
        bc = np.clip(np.asarray(self.bone_conf, dtype=np.float64), 0.0, 1.0)
        if jc.shape != (j.shape[0],):
            raise ShapeError(f"joint_conf must have {j.shape[0]} entries, got {jc.shape}")
        object.__setattr__(self, "joints2d", j)
        object.__setattr__(self, "joint_conf", jc)
        object.__setattr__(self, "bone_conf", bc)


@dataclass(frozen=True)
class Pose3D:
    joints: np.ndarray
    frame: str = PERSON

    def __post_init__(self) -> None:
        j = np.asarray(self.joints, dtype=np.float64)
        if j.ndim != 2 or j.shape[1] != 3:
            raise ShapeError(f"Pose3D joints must be (n, 3), got {j.shape}")
        if self.frame not in (PERSON, CAMERA):
            raise ValidationError(f"unknown pose frame {self.frame!r}")
        object.__setattr__(self, "joints", j)
