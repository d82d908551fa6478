"""Occlusion detection and the depth/velocity root fusion inside occlusion intervals."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

JOINT_CONF_THRESHOLD = 0.5
VISIBLE_FRACTION_THRESHOLD = 0.30


@dataclass(frozen=True)
class OcclusionInterval:
    start: int
    end: int  # inclusive

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise ValidationError(f"interval start {self.start} after end {self.end}")

    def __contains__(self, t: int) -> bool:
        return self.start <= t <= self.end


@dataclass
class TrackedSequence:
    """One person's time-ordered observations.

    Arrays share a leading frame axis; ``gt3d`` holds camera-centric ground
    truth in mm when known.
    """

    person_id: int
    t: np.ndarray
    joints2d: np.ndarray
    conf: np.ndarray
    paf_conf: np.ndarray
    occluded: np.ndarray
    gt3d: np.ndarray | None = None
    intervals: list[OcclusionInterval] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.t = np.asarray(self.t, dtype=np.int64)
        if self.t.size > 1 and np.any(np.diff(self.t) <= 0):
            raise ValidationError(f"track {self.person_id}: frame indices must be strictly increasing")
        self.occluded = np.asarray(self.occluded, dtype=bool)
        if not self.intervals:
            self.intervals = occlusion_intervals(self.occluded)

    def __len__(self) -> int:
        return len(self.t)


def joint_occluded(conf: float | np.ndarray) -> bool | np.ndarray:
    """A joint is occluded when its heatmap confidence is strictly below 0.5."""
    out = np.asarray(conf) < JOINT_CONF_THRESHOLD
    return bool(out) if out.ndim == 0 else out


def pose_occluded(joint_flags: Sequence[bool] | np.ndarray) -> bool | np.ndarray:
    """A pose is occluded when fewer than 30% of its joints are visible.

    Accepts one flag vector or a (T, n) stack.
    """
    flags = np.asarray(joint_flags, dtype=bool)
    if flags.shape[-1] == 0:
        raise ValidationError("pose_occluded needs at least one joint")
    visible = (~flags).sum(axis=-1) / flags.shape[-1]
    out = visible < VISIBLE_FRACTION_THRESHOLD
    return bool(out) if out.ndim == 0 else out


def occlusion_intervals(flags: Iterable[bool]) -> list[OcclusionInterval]:
    """Maximal runs of consecutive occluded frames (indices into ``flags``)."""
    out: list[OcclusionInterval] = []
    start = None
    f = [bool(x) for x in flags]
    for i, occ in enumerate(f):
        if occ and start is None:
            start = i
        elif not occ and start is not None:
            out.append(OcclusionInterval(start, i - 1))
            start = None
    if start is not None:
        out.append(OcclusionInterval(start, len(f) - 1))
    return out


def flags_from_intervals(intervals: Iterable[OcclusionInterval], length: int) -> np.ndarray:
    flags = np.zeros(length, dtype=bool)
    for iv in intervals:
        flags[iv.start : iv.end + 1] = True
    return flags


def fusion_weight(t: int, interval: OcclusionInterval) -> float:
    """exp(-distance in frames to the nearer interval boundary)."""
    if t not in interval:
        raise ValidationError(f"frame {t} lies outside occlusion interval [{interval.start}, {interval.end}]")
    return float(np.exp(-min(t - interval.start, interval.end - t)))


def fuse_root(p_d: np.ndarray, p_s: np.ndarray, w: float) -> np.ndarray:
    if not 0.0 <= w <= 1.0:
        raise ValidationError(f"fusion weight must lie in [0, 1], got {w}")
    p_d = np.asarray(p_d, dtype=np.float64)
    p_s = np.asarray(p_s, dtype=np.float64)
    if w == 1.0:
        return p_d.copy()
    if w == 0.0:
        return p_s.copy()
    out = w * p_d + (1.0 - w) * p_s
    # rounding can push the blend one ulp past an endpoint
    return np.clip(out, np.minimum(p_d, p_s), np.maximum(p_d, p_s))
