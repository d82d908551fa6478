"""Synthetic multi-person motion scenes rendered through a weak-perspective camera.

Skeletons are animated by forward kinematics on fixed bone offsets, so bone
lengths never change. Scenes are laid out at a reference focal length of
1000 px; rendering with another focal length scales every depth by f / 1000,
which keeps each root's Z/f (and so the normalised root trajectory) fixed.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from .camera import CameraModel, normalize_batch, project
from .errors import ValidationError
from .fusion import joint_occluded, pose_occluded
from .skeleton import SkeletonTopology

MOTIONS = ("stand", "walk-line", "walk-circle", "crouch-rise")
OCCLUSIONS = ("none", "crossing", "box")
REFERENCE_FOCAL = 1000.0

# offsets from parent in the person frame (x: left, y: up, z: forward), mm
_REST_OFFSETS = {
    "pelvis": (0.0, 0.0, 0.0),
    "r_hip": (-120.0, 0.0, 0.0),
    "r_knee": (0.0, -440.0, 0.0),
    "r_ankle": (0.0, -440.0, 0.0),
    "l_hip": (120.0, 0.0, 0.0),
    "l_knee": (0.0, -440.0, 0.0),
    "l_ankle": (0.0, -440.0, 0.0),
    "spine": (0.0, 250.0, 0.0),
    "thorax": (0.0, 250.0, 0.0),
    "neck": (0.0, 150.0, 0.0),
    "head": (0.0, 150.0, 0.0),
    "l_shoulder": (170.0, -20.0, 0.0),
    "l_elbow": (0.0, -280.0, 0.0),
    "l_wrist": (0.0, -250.0, 0.0),
    "r_shoulder": (-170.0, -20.0, 0.0),
    "r_elbow": (0.0, -280.0, 0.0),
    "r_wrist": (0.0, -250.0, 0.0),
}
LEG_LENGTH = 880.0
CAMERA_HEIGHT = 1000.0  # ground plane sits this far below the optical axis


@dataclass
class SceneConfig:
    person_count: int = 2
    frame_count: int = 64
    focal: float = 1000.0
    image_size: tuple[int, int] = (1920, 1080)
    depth_range: tuple[float, float] = (2.5, 7.0)  # root Z/f at the reference focal
    motions: list[str] | None = None  # one per person; random when None
    occlusion: str = "none"
    noise_gain: float = 0.05
    occlusion_noise_gain: float = 0.5
    rng_seed: int = 0
    bin_range: tuple[float, float] = (0.5, 8.0)
    min_window: int = 9
    box: tuple[float, float, float, float] | None = None  # pixel rectangle x0, y0, x1, y1

    def validate(self) -> None:
        if not 1 <= self.person_count <= 6:
            raise ValidationError(f"person_count must be within 1..6, got {self.person_count}")
        if self.frame_count < 2 * self.min_window:
            raise ValidationError(f"frame_count must be at least {2 * self.min_window}, got {self.frame_count}")
        if self.focal <= 0:
            raise ValidationError("focal must be positive")
        lo, hi = self.depth_range
        if not (self.bin_range[0] <= lo < hi <= self.bin_range[1]):
            raise ValidationError(f"depth range {self.depth_range} must lie inside depth bins {self.bin_range}")
        if self.occlusion not in OCCLUSIONS:
            raise ValidationError(f"occlusion must be one of {OCCLUSIONS}, got {self.occlusion!r}")
        if self.motions is not None:
            if len(self.motions) != self.person_count:
                raise ValidationError("need one motion kind per person")
            bad = [m for m in self.motions if m not in MOTIONS]
            if bad:
                raise ValidationError(f"unknown motion kinds {bad}")
        if self.noise_gain < 0 or self.occlusion_noise_gain < 0:
            raise ValidationError("noise gains must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @property
    def camera(self) -> CameraModel:
        return CameraModel.for_image(*self.image_size, focal=self.focal)


@dataclass
class GroundTruthSequence:
    joints3d: np.ndarray  # (P, T, n, 3) camera coordinates, mm
    camera: CameraModel
    person_ids: list[int]
    motions: list[str] = field(default_factory=list)

    @property
    def roots(self) -> np.ndarray:
        return self.joints3d[:, :, 0]


@dataclass
class RenderedScene:
    truth: GroundTruthSequence
    joints2d: np.ndarray  # (P, T, n, 2)
    conf: np.ndarray  # (P, T, n)
    paf_conf: np.ndarray  # (P, T, m)
    joint_occluded: np.ndarray  # (P, T, n)
    pose_occluded: np.ndarray  # (P, T)
    clean2d: np.ndarray  # (P, T, n, 2) exact projections


# kinematics


def _rot_x(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    c, s = np.cos(a), np.sin(a)
    m = np.zeros(a.shape + (3, 3))
    m[..., 0, 0] = 1.0
    m[..., 1, 1] = c
    m[..., 1, 2] = -s
    m[..., 2, 1] = s
    m[..., 2, 2] = c
    return m


def _rot_z(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    c, s = np.cos(a), np.sin(a)
    m = np.zeros(a.shape + (3, 3))
    m[..., 0, 0] = c
    m[..., 0, 1] = -s
    m[..., 1, 0] = s
    m[..., 1, 1] = c
    m[..., 2, 2] = 1.0
    return m


def _heading_frame(heading: np.ndarray) -> np.ndarray:
    """Rotation taking person-frame vectors to camera coordinates (Y down)."""
    heading = np.asarray(heading, dtype=np.float64)
    fwd = np.stack([np.sin(heading), np.zeros_like(heading), np.cos(heading)], axis=-1)
    up = np.broadcast_to(np.array([0.0, -1.0, 0.0]), fwd.shape)
    left = np.cross(up, fwd)
    return np.stack([left, up, fwd], axis=-1)


def forward_kinematics(
    topology: SkeletonTopology, local_rot: dict[str, np.ndarray], root_pos: np.ndarray, heading: np.ndarray
) -> np.ndarray:
    """Joint positions (T, n, 3) from per-joint local rotations of the incoming bone."""
    T = root_pos.shape[0]
    n = topology.joint_count
    parent = {c: p for p, c in topology.bones}
    names = topology.joint_names
    world = _heading_frame(heading)
    acc = [None] * n
    out = np.zeros((T, n, 3))
    out[:, topology.root_index] = root_pos
    acc[topology.root_index] = world
    # parents precede children in breadth-first order from the root
    order = [topology.root_index]
    for j in order:
        order.extend(c for p, c in topology.bones if p == j)
    eye = np.broadcast_to(np.eye(3), (T, 3, 3))
    for j in order[1:]:
        p = parent[j]
        rot = local_rot.get(names[j], eye)
        acc[j] = np.matmul(acc[p], rot)
        offset = np.asarray(_REST_OFFSETS.get(names[j], (0.0, 100.0, 0.0)))
        out[:, j] = out[:, p] + np.einsum("tij,j->ti", acc[j], offset)
    return out


def _idle_arms(rng: np.random.Generator, T: int) -> dict[str, np.ndarray]:
    la, ra = rng.uniform(0.1, 0.35, 2)
    lf, rf = rng.uniform(0.0, 0.6, 2)
    ones = np.ones(T)
    return {
        "l_elbow": _rot_z(la * ones),
        "r_elbow": _rot_z(-ra * ones),
        "l_wrist": _rot_x(-lf * ones),
        "r_wrist": _rot_x(-rf * ones),
    }


def _walk_pose(rng: np.random.Generator, T: int, speed: float) -> dict[str, np.ndarray]:
    stride = 1400.0
    phase = rng.uniform(0, 2 * np.pi) + 2 * np.pi * np.arange(T) * speed / stride
    amp = 0.45
    hip_r = -amp * np.sin(phase)
    hip_l = amp * np.sin(phase)
    knee_r = 0.6 * np.clip(np.sin(phase - np.pi / 2), 0, None)
    knee_l = 0.6 * np.clip(np.sin(phase + np.pi / 2), 0, None)
    rot = _idle_arms(rng, T)
    rot.update({
        "r_knee": _rot_x(hip_r),
        "l_knee": _rot_x(hip_l),
        "r_ankle": _rot_x(knee_r),
        "l_ankle": _rot_x(knee_l),
        "l_elbow": np.matmul(rot["l_elbow"], _rot_x(0.8 * hip_r)),
        "r_elbow": np.matmul(rot["r_elbow"], _rot_x(0.8 * hip_l)),
    })
    return rot


def _ground_y(lift: np.ndarray | float = 0.0) -> np.ndarray | float:
    return CAMERA_HEIGHT - LEG_LENGTH + lift


def motion_track(
    kind: str,
    rng: np.random.Generator,
    T: int,
    topology: SkeletonTopology,
    depth_range: tuple[float, float],
    anchor: tuple[float, float] | None = None,
    heading: float | None = None,
    speed: float | None = None,
) -> np.ndarray:
    """Animate one person at the reference focal; returns (T, n, 3) camera coordinates in mm.

    ``anchor`` is the (X, Z) mid-sequence root position, ``heading`` the walking
    direction in radians (0 = away from camera along +Z).
    """
    lo, hi = (d * REFERENCE_FOCAL for d in depth_range)
    margin = 300.0
    if anchor is None:
        z = rng.uniform(lo + margin, hi - margin)
        anchor = (rng.uniform(-0.4, 0.4) * z, z)
    ax, az = anchor
    t = np.arange(T, dtype=np.float64)
    pelvis_y = np.full(T, CAMERA_HEIGHT - LEG_LENGTH)

    if kind == "stand":
        head = rng.uniform(-np.pi, np.pi) if heading is None else heading
        root = np.stack([np.full(T, ax), pelvis_y, np.full(T, az)], axis=-1)
        headings = np.full(T, head)
        rot = _idle_arms(rng, T)
    elif kind == "walk-line":
        v = rng.uniform(20.0, 40.0) if speed is None else speed
        if heading is None:
            # pick a direction whose whole path stays inside the depth range
            for _ in range(64):
                heading = rng.uniform(-np.pi, np.pi)
                dz = np.cos(heading) * v * (T - 1) / 2
                if lo <= az - abs(dz) and az + abs(dz) <= hi:
                    break
            else:
                heading = np.pi / 2
        d = np.array([np.sin(heading), np.cos(heading)])
        s = v * (t - (T - 1) / 2)
        root = np.stack([ax + d[0] * s, pelvis_y, az + d[1] * s], axis=-1)
        headings = np.full(T, heading)
        rot = _walk_pose(rng, T, v)
    elif kind == "walk-circle":
        v = rng.uniform(20.0, 35.0) if speed is None else speed
        r = rng.uniform(500.0, 1000.0)
        r = min(r, (hi - lo) / 2 - 1.0)
        cz = np.clip(az, lo + r, hi - r)
        omega = v / r * rng.choice([-1.0, 1.0])
        ang = rng.uniform(-np.pi, np.pi) + omega * t
        root = np.stack([ax + r * np.sin(ang), pelvis_y, cz + r * np.cos(ang)], axis=-1)
        headings = ang + np.sign(omega) * np.pi / 2
        rot = _walk_pose(rng, T, v)
    elif kind == "crouch-rise":
        head = rng.uniform(-np.pi, np.pi) if heading is None else heading
        period = rng.uniform(30.0, 60.0)
        depth = rng.uniform(0.5, 1.1)
        theta = depth * (1 - np.cos(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi))) / 2
        root = np.stack([np.full(T, ax), CAMERA_HEIGHT - LEG_LENGTH * np.cos(theta), np.full(T, az)], axis=-1)
        headings = np.full(T, head)
        rot = _idle_arms(rng, T)
        rot.update({
            "r_knee": _rot_x(-theta),
            "l_knee": _rot_x(-theta),
            "r_ankle": _rot_x(2 * theta),
            "l_ankle": _rot_x(2 * theta),
            "thorax": _rot_x(-0.5 * theta),
        })
    else:
        raise ValidationError(f"unknown motion kind {kind!r}")
    return forward_kinematics(topology, rot, root, headings)


def generate(config: SceneConfig, topology: SkeletonTopology | None = None) -> GroundTruthSequence:
    config.validate()
    topology = topology or SkeletonTopology.default()
    rng = np.random.default_rng([config.rng_seed, 0])
    T, P = config.frame_count, config.person_count
    lo, hi = config.depth_range
    motions = list(config.motions) if config.motions else [str(rng.choice(MOTIONS)) for _ in range(P)]
    tracks: list[np.ndarray] = []
    if config.occlusion == "crossing" and P >= 2:
        # persons 0 and 1 walk laterally in opposite directions and cross
        # the optical axis at the same frame, person 1 farther away
        motions[0] = motions[1] = "walk-line"
        z_near = rng.uniform(lo + 0.3, max(lo + 0.4, (lo + hi) / 2)) * REFERENCE_FOCAL
        z_far = min(z_near + rng.uniform(800.0, 2000.0), hi * REFERENCE_FOCAL - 300.0)
        z_far = max(z_far, z_near + 500.0)
        t_cross = rng.uniform(0.35, 0.65) * (T - 1)
        offset = (T - 1) / 2 - t_cross
        for pid, (z, sign) in enumerate(((z_near, 1.0), (z_far, -1.0))):
            v = rng.uniform(25.0, 40.0)
            heading = sign * np.pi / 2
            tracks.append(motion_track("walk-line", rng, T, topology, config.depth_range,
                                       anchor=(sign * v * offset, z), heading=heading, speed=v))
        for pid in range(2, P):
            kind = motions[pid] if config.motions else str(rng.choice(("stand", "walk-circle", "crouch-rise")))
            motions[pid] = kind
            tracks.append(motion_track(kind, rng, T, topology, config.depth_range))
    else:
        for kind in motions:
            tracks.append(motion_track(kind, rng, T, topology, config.depth_range))
    joints = np.stack(tracks)
    scale = config.focal / REFERENCE_FOCAL
    if scale != 1.0:
        # move each person along the depth axis only: root Z/f is preserved
        root_z = joints[:, :, topology.root_index : topology.root_index + 1, 2]
        joints[..., 2] += root_z * (scale - 1.0)
    if np.any(joints[..., 2] <= 0):
        raise ValidationError("generated a joint behind the camera")
    return GroundTruthSequence(joints, config.camera, list(range(P)), motions)


def _bbox(points: np.ndarray, expand: float = 0.10) -> np.ndarray:
    lo = points.min(axis=-2)
    hi = points.max(axis=-2)
    mid = (lo + hi) / 2
    half = (hi - lo) / 2 * (1.0 + expand)
    return np.concatenate([mid - half, mid + half], axis=-1)


def occlusion_mask(
    clean2d: np.ndarray, roots_z: np.ndarray, box: Sequence[float] | None = None
) -> np.ndarray:
    """(P, T, n) True where a joint falls inside a nearer person's expanded 2D box or the static box."""
    P, T, n, _ = clean2d.shape
    occ = np.zeros((P, T, n), dtype=bool)
    boxes = _bbox(clean2d)  # (P, T, 4)
    for far in range(P):
        for near in range(P):
            if near == far:
                continue
            nearer = roots_z[near] < roots_z[far]  # (T,)
            b = boxes[near][:, None, :]
            inside = (
                (clean2d[far, ..., 0] >= b[..., 0]) & (clean2d[far, ..., 0] <= b[..., 2])
                & (clean2d[far, ..., 1] >= b[..., 1]) & (clean2d[far, ..., 1] <= b[..., 3])
            )
            occ[far] |= inside & nearer[:, None]
    if box is not None:
        x0, y0, x1, y1 = box
        occ |= (
            (clean2d[..., 0] >= x0) & (clean2d[..., 0] <= x1)
            & (clean2d[..., 1] >= y0) & (clean2d[..., 1] <= y1)
        )
    return occ


def default_box(config: SceneConfig, rng: np.random.Generator) -> tuple[float, float, float, float]:
    w, h = config.image_size
    x0 = rng.uniform(0.3, 0.55) * w
    bw = rng.uniform(0.08, 0.18) * w
    y0 = rng.uniform(0.35, 0.55) * h
    return (x0, y0, x0 + bw, float(h))


def render(seq: GroundTruthSequence, config: SceneConfig, topology: SkeletonTopology | None = None) -> RenderedScene:
    """Project ground truth and simulate a 2D detector's confidences and noise."""
    topology = topology or SkeletonTopology.default()
    rng = np.random.default_rng([config.rng_seed, 1])
    clean = project(seq.joints3d, seq.camera)
    root = topology.root_index
    box = None
    if config.occlusion == "box":
        box = config.box if config.box is not None else default_box(config, rng)
    occ = occlusion_mask(clean, seq.joints3d[:, :, root, 2], box)
    joints2d, conf, paf = _detect(clean, occ, rng, config.noise_gain, config.occlusion_noise_gain, topology)
    jocc = joint_occluded(conf)
    return RenderedScene(seq, joints2d, conf, paf, jocc, pose_occluded(jocc), clean)


def _detect(
    points2d: np.ndarray,
    occ: np.ndarray,
    rng: np.random.Generator,
    gain: float,
    occluded_gain: float,
    topology: SkeletonTopology,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Detector simulation: confidences by visibility, noise std (1 - c) * gain * s."""
    root = topology.root_index
    conf = np.where(occ, rng.uniform(0.0, 0.4, occ.shape), rng.uniform(0.7, 1.0, occ.shape))
    _, s, _ = normalize_batch(points2d, root)
    g = np.where(occ, occluded_gain, gain)
    std = (1.0 - conf) * g * np.nan_to_num(s)[..., None]
    noise = rng.standard_normal(points2d.shape)
    joints2d = points2d + noise * std[..., None]
    bones = np.asarray(topology.bones, dtype=np.int64).reshape(-1, 2)
    paf = np.minimum(conf[..., bones[:, 0]], conf[..., bones[:, 1]])
    return joints2d, conf, paf


def mask_joints(
    joints2d: np.ndarray,
    conf: np.ndarray,
    fraction: float,
    rng: np.random.Generator,
    occluded_gain: float = 0.5,
    topology: SkeletonTopology | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Re-detect a random ``fraction`` of joints per frame as occluded.

    Masked joints get confidence below 0.5 and the occluded-joint noise of
    ``render``; the others keep their coordinates and confidences. Returns
    (joints2d, conf, paf_conf).
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValidationError(f"mask fraction must lie in [0, 1], got {fraction}")
    topology = topology or SkeletonTopology.default()
    joints2d = np.asarray(joints2d, dtype=np.float64)
    conf = np.asarray(conf, dtype=np.float64)
    n = conf.shape[-1]
    k = int(round(fraction * n))
    keys = rng.random(conf.shape)
    masked = np.zeros(conf.shape, dtype=bool)
    np.put_along_axis(masked, np.argsort(keys, axis=-1)[..., :k], True, axis=-1)
    noisy, low, _ = _detect(joints2d, np.ones_like(masked), rng, 0.0, occluded_gain, topology)
    out2d = np.where(masked[..., None], noisy, joints2d)
    out_conf = np.where(masked, low, conf)
    bones = np.asarray(topology.bones, dtype=np.int64).reshape(-1, 2)
    paf = np.minimum(out_conf[..., bones[:, 0]], out_conf[..., bones[:, 1]])
    return out2d, out_conf, paf


def split(items: Sequence[Any], ratios: Sequence[float] = (0.7, 0.15, 0.15), seed: int = 0) -> tuple[list, list, list]:
    """Deterministic disjoint train/val/test partition at sequence level."""
    r = np.asarray(ratios, dtype=np.float64)
    if r.shape != (3,) or np.any(r < 0) or not np.isclose(r.sum(), 1.0):
        raise ValidationError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(items)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(r[0] * n))
    n_val = min(int(round(r[1] * n)), n - n_train)
    idx = (perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :])
    return tuple([items[i] for i in sorted(part)] for part in idx)  # type: ignore[return-value]
