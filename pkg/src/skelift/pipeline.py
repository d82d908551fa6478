"""End-to-end inference from tracked 2D observations to camera-centric 3D poses.

Per track: GCN lifting per frame, joint-TCN smoothing over centred windows,
root-TCN depth (Z/f) and back-projection of the root pixel, then inside each
occlusion interval the velocity-TCN extrapolates the root and the two root
estimates are blended with a weight that decays away from the interval ends.
The velocity path is its own recursion inside an interval: it starts from the
last root before the interval and each step adds the predicted velocity to the
previous velocity-path root. Frames therefore run sequentially within a track;
tracks are independent and run in a thread pool.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import gcn as G
from . import tcn as K
from .camera import CameraModel, back_project
from .diffcore import Checkpoint, ParamStore, load_checkpoint
from .errors import ConfigurationError, ValidationError
from .fusion import TrackedSequence, fuse_root, fusion_weight, joint_occluded, occlusion_intervals, pose_occluded
from .skeleton import SkeletonTopology
from .train import passthrough_predict

DEPTH, FUSED, VELOCITY = "depth", "fused", "velocity"


@dataclass
class Model:
    params: ParamStore
    hyper: dict[str, Any]


@dataclass
class ModelBundle:
    gcn: Model
    joint: Model
    root: Model
    velocity: Model
    passthrough: Model | None = None

    @property
    def bins(self) -> K.DepthBins:
        return K.DepthBins.from_dict(self.root.hyper["bins"])

    @classmethod
    def load(
        cls,
        gcn: str | Path,
        joint: str | Path,
        root: str | Path,
        velocity: str | Path,
        passthrough: str | Path | None = None,
    ) -> ModelBundle:
        def get(path: str | Path, name: str) -> Model:
            if not Path(path).exists():
                raise ConfigurationError(f"checkpoint not found: {path}")
            try:
                ck: Checkpoint = load_checkpoint(path, name)
            except (ValidationError, KeyError, ValueError) as exc:
                raise ConfigurationError(f"{path}: {exc}") from exc
            return Model(ck.params, ck.hyper)

        return cls(
            get(gcn, "gcn"),
            get(joint, "tcn_joint"),
            get(root, "tcn_root"),
            get(velocity, "tcn_velocity"),
            get(passthrough, "passthrough") if passthrough is not None else None,
        )

    def check_topology(self, topology: SkeletonTopology) -> None:
        n = topology.joint_count
        for name, model in (("gcn", self.gcn), ("tcn_joint", self.joint), ("tcn_root", self.root)):
            if model.hyper.get("joint_count") != n:
                raise ConfigurationError(f"{name} checkpoint expects {model.hyper.get('joint_count')} joints, data has {n}")
        if self.gcn.hyper.get("bone_count") != topology.bone_count:
            raise ConfigurationError(f"gcn checkpoint expects {self.gcn.hyper.get('bone_count')} bones, data has {topology.bone_count}")


@dataclass
class PipelineConfig:
    lifter: str = "gcn"  # or "passthrough": raw coordinates into a plain MLP
    use_joint_tcn: bool = True
    use_velocity: bool = True
    threads: int | None = None


@dataclass
class TrackResult:
    person_id: int
    t: np.ndarray
    pose_rel: np.ndarray  # (T, n, 3) mm, root at origin
    root: np.ndarray  # (T, 3): X mm, Y mm, Z/f
    pose_cam: np.ndarray | None  # (T, n, 3) mm, None without a focal length
    occluded: np.ndarray  # (T,)
    source: list[str]
    weight: np.ndarray  # (T,) depth-path weight used for the root
    skipped: np.ndarray  # (T,)
    root_depth: np.ndarray  # (T, 3) depth-path roots
    root_velocity: np.ndarray  # (T, 3) velocity-path roots, NaN outside intervals


@dataclass
class PipelineOutput:
    tracks: list[TrackResult] = field(default_factory=list)


def worker_count(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, requested)
    env = os.environ.get("SKELIFT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"SKELIFT_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _fill_invalid(feats: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Replace rows of invalid frames with the nearest earlier (else later) valid row."""
    if valid.all() or not valid.any():
        return np.nan_to_num(feats, nan=0.0)
    idx = np.where(valid, np.arange(len(valid)), -1)
    idx = np.maximum.accumulate(idx)
    first = int(np.argmax(valid))
    idx[idx < 0] = first
    return feats[idx]


def lift_track(track: TrackedSequence, models: ModelBundle, mats: G.SkeletonMatrices, config: PipelineConfig) -> np.ndarray:
    """Per-frame person-centric poses (mm) before temporal smoothing."""
    root = mats.topology.root_index
    inputs = G.prepare_inputs(track.joints2d, track.conf, track.paf_conf, mats)
    if config.lifter == "gcn":
        return G.gcn_predict(models.gcn.params, models.gcn.hyper, inputs, root)
    if config.lifter == "passthrough":
        if models.passthrough is None:
            raise ConfigurationError("passthrough lifter requested without a passthrough checkpoint")
        return passthrough_predict(models.passthrough.params, models.passthrough.hyper, inputs, root)
    raise ConfigurationError(f"unknown lifter {config.lifter!r}")


def infer_track(
    track: TrackedSequence,
    models: ModelBundle,
    camera: CameraModel,
    mats: G.SkeletonMatrices,
    config: PipelineConfig,
) -> TrackResult:
    T = len(track)
    root = mats.topology.root_index
    bins = models.bins

    # frames with no usable detection at all are skipped and repeat the previous output
    s = np.linalg.norm(np.delete(track.joints2d - track.joints2d[:, root : root + 1], root, axis=1), axis=-1).mean(axis=-1)
    skipped = np.all(track.conf <= 0.0, axis=-1) | ~(s >= 1e-9)

    poses = lift_track(track, models, mats, config)
    if config.use_joint_tcn:
        half = models.joint.hyper["window"] // 2
        poses = K.joint_tcn_predict(models.joint.params, models.joint.hyper, K.centered_windows(poses, half), root)

    feats = K.root_features(track.joints2d, camera.center, models.root.hyper, root)
    feats = _fill_invalid(feats, ~skipped)
    half = models.root.hyper["window"] // 2
    logits = K.root_tcn_logits(models.root.params, models.root.hyper, K.centered_windows(feats, half))
    depth = np.atleast_1d(K.soft_argmax_depth(logits, bins))
    root_px = _fill_invalid(track.joints2d[:, root], ~skipped)
    p_depth = back_project(root_px, depth, camera.center)  # (X, Y, Z/f)

    occluded = pose_occluded(joint_occluded(track.conf)) if T else np.zeros(0, dtype=bool)
    occluded = np.atleast_1d(occluded)
    intervals = occlusion_intervals(occluded) if config.use_velocity else []
    in_interval = {t: iv for iv in intervals for t in range(iv.start, iv.end + 1)}

    # inside an interval the velocity path is its own recursion, seeded from the
    # last fused root before the interval; its history mixes both
    n_hist = models.velocity.hyper["window"]
    fused = np.zeros((T, 3))
    chain = np.zeros((T, 3))
    p_vel = np.full((T, 3), np.nan)
    weight = np.ones(T)
    source = [DEPTH] * T
    out_pose = poses.copy()
    for t in range(T):
        if skipped[t]:
            if t > 0:
                fused[t] = fused[t - 1]
                chain[t] = chain[t - 1]
                out_pose[t] = out_pose[t - 1]
                weight[t] = weight[t - 1]
                source[t] = source[t - 1]
            else:
                fused[t] = chain[t] = p_depth[t]
            continue
        iv = in_interval.get(t)
        if iv is None or t == 0:
            fused[t] = chain[t] = p_depth[t]
            continue
        idx = np.clip(np.arange(t - n_hist - 1, t), 0, t - 1)
        hist = chain[idx]
        v = K.velocity_tcn_predict(models.velocity.params, models.velocity.hyper, hist[None, 1:], np.diff(hist, axis=0)[None])[0]
        p_vel[t] = chain[t] = K.propagate(chain[t - 1], v)
        w = fusion_weight(t, iv)
        weight[t] = w
        fused[t] = fuse_root(p_depth[t], p_vel[t], w)
        source[t] = DEPTH if w == 1.0 else (VELOCITY if w == 0.0 else FUSED)

    pose_cam = None
    if camera.focal is not None:
        root_cam = np.stack([fused[:, 0], fused[:, 1], fused[:, 2] * camera.focal], axis=-1)
        pose_cam = out_pose + root_cam[:, None, :]
    return TrackResult(track.person_id, track.t.copy(), out_pose, fused, pose_cam, occluded, source, weight, skipped, p_depth, p_vel)


def infer(
    tracks: Sequence[TrackedSequence],
    models: ModelBundle,
    camera: CameraModel,
    topology: SkeletonTopology,
    config: PipelineConfig | None = None,
) -> PipelineOutput:
    config = config or PipelineConfig()
    models.check_topology(topology)
    mats = G.SkeletonMatrices.from_topology(topology)
    workers = min(worker_count(config.threads), max(1, len(tracks)))
    if workers == 1:
        results = [infer_track(tr, models, camera, mats, config) for tr in tracks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda tr: infer_track(tr, models, camera, mats, config), tracks))
    return PipelineOutput(results)


def output_frames(output: PipelineOutput) -> list[dict[str, Any]]:
    """Prediction JSONL frame records, one per distinct frame index."""
    by_t: dict[int, list[dict[str, Any]]] = {}
    for tr in output.tracks:
        for i, t in enumerate(tr.t):
            by_t.setdefault(int(t), []).append({
                "id": int(tr.person_id),
                "pose3d_cam": tr.pose_cam[i].tolist() if tr.pose_cam is not None else None,
                "pose3d_rel": tr.pose_rel[i].tolist(),
                "root": tr.root[i].tolist(),
                "occluded": bool(tr.occluded[i]),
                "source": tr.source[i],
                "w": float(tr.weight[i]),
                "skipped": bool(tr.skipped[i]),
            })
    return [{"t": t, "persons": sorted(by_t[t], key=lambda p: p["id"])} for t in sorted(by_t)]
