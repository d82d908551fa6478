"""Joint- and bone-GCN lifting a confidence-weighted 2D pose to a person-centric 3D pose.

Edge weights are directed: a vertex's outgoing row is scaled by its own
confidence and decays with hop distance. Columns are then normalised so the
weights entering each vertex sum to one, and every layer aggregates
GraphSAGE-style (neighbourhood message concatenated with the vertex's own
feature) before a shared linear map.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from . import diffcore as dc
from .camera import normalize_batch
from .diffcore import ParamStore, Tensor
from .errors import ShapeError, ValidationError
from .poses import PERSON, ObservedPose2D, Pose3D
from .skeleton import SkeletonTopology, bone_hop_matrix, hop_distance_matrix, incidence_matrix

DEFAULT_HYPER: dict[str, Any] = {
    "joint_widths": [128, 128, 128],
    "bone_widths": [128, 128, 128],
    "head_width": 256,
    "activation": "leaky_relu",
    "slope": 0.1,
    # network output is in metres, poses are exchanged in millimetres
    "output_scale": 1000.0,
    "noise_gain": 0.05,
}


@dataclass(frozen=True)
class DirectedAdjacency:
    a: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        if np.any(self.a < 0):
            raise ValidationError("adjacency entries must be non-negative")


@dataclass(frozen=True)
class SkeletonMatrices:
    """Topology-derived constants the GCN needs, computed once per skeleton."""

    topology: SkeletonTopology
    hops: np.ndarray
    bone_hops: np.ndarray
    incidence: np.ndarray

    @classmethod
    def from_topology(cls, topology: SkeletonTopology) -> SkeletonMatrices:
        return cls(topology, hop_distance_matrix(topology), bone_hop_matrix(topology), incidence_matrix(topology))

    @property
    def joint_decay(self) -> np.ndarray:
        return np.exp(-self.hops.astype(np.float64))

    @property
    def bone_decay(self) -> np.ndarray:
        return np.exp(-self.bone_hops.astype(np.float64))


def _check_conf(conf: np.ndarray) -> np.ndarray:
    conf = np.asarray(conf, dtype=np.float64)
    if np.any(~np.isfinite(conf)) or np.any(conf < 0) or np.any(conf > 1):
        raise ValidationError("confidences must lie in [0, 1]")
    return conf


def confidence_adjacency(conf: np.ndarray, hops: np.ndarray) -> np.ndarray:
    """Batched a[..., i, j] = conf[..., i] * exp(-hops[i, j]); the diagonal reduces to conf[i]."""
    conf = _check_conf(conf)
    hops = np.asarray(hops)
    if conf.shape[-1] != hops.shape[0]:
        raise ShapeError(f"{conf.shape[-1]} confidences for a {hops.shape} hop matrix")
    return conf[..., :, None] * np.exp(-hops.astype(np.float64))


def build_joint_adjacency(joint_conf: np.ndarray, hops: np.ndarray) -> DirectedAdjacency:
    return DirectedAdjacency(confidence_adjacency(joint_conf, hops), normalized=False)


def build_bone_adjacency(bone_conf: np.ndarray, bone_hops: np.ndarray) -> DirectedAdjacency:
    return DirectedAdjacency(confidence_adjacency(bone_conf, bone_hops), normalized=False)


def normalize_columns(a: np.ndarray) -> np.ndarray:
    """Divide each column by its sum; all-zero columns stay zero."""
    d = a.sum(axis=-2, keepdims=True)
    safe = np.where(d > 0, d, 1.0)
    return np.where(d > 0, a / safe, 0.0)


def normalize_in_degree(adj: DirectedAdjacency) -> DirectedAdjacency:
    if adj.normalized:
        raise ValidationError("adjacency is already normalised")
    return DirectedAdjacency(normalize_columns(adj.a), normalized=True)


def bone_features(joints2d: np.ndarray, inc: np.ndarray) -> np.ndarray:
    """Bone vectors (child minus parent) via the incidence matrix; batch axes allowed."""
    joints2d = np.asarray(joints2d, dtype=np.float64)
    if inc.shape[1] != joints2d.shape[-2]:
        raise ShapeError(f"incidence {inc.shape} does not match {joints2d.shape[-2]} joints")
    return np.matmul(inc, joints2d)


def sage_layer(
    h: Tensor,
    adj_norm: DirectedAdjacency | Tensor,
    weight: Tensor,
    act: str = "leaky_relu",
    slope: float = 0.1,
) -> Tensor:
    """act(concat(A_norm @ h, h) @ weight)."""
    if isinstance(adj_norm, DirectedAdjacency):
        if not adj_norm.normalized:
            raise ValidationError("sage_layer needs an in-degree normalised adjacency")
        adj = Tensor(adj_norm.a)
    else:
        adj = adj_norm
    if weight.shape[0] != 2 * h.shape[-1]:
        raise ShapeError(f"weight {weight.shape} expects input width {weight.shape[0] // 2}, got {h.shape[-1]}")
    agg = dc.matmul(adj, h)
    return dc.activation(dc.matmul(dc.concat_features(agg, h), weight), act, slope)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_gcn(topology: SkeletonTopology, hyper: Mapping[str, Any] | None = None, seed: int = 0) -> tuple[ParamStore, dict[str, Any]]:
    hp = {**DEFAULT_HYPER, **(hyper or {})}
    hp["joint_count"] = topology.joint_count
    hp["bone_count"] = topology.bone_count
    rng = np.random.default_rng(seed)
    params = ParamStore()
    for stream, widths in (("joint", hp["joint_widths"]), ("bone", hp["bone_widths"])):
        d_in = 3
        for i, d_out in enumerate(widths):
            params[f"{stream}.{i}.w"] = _glorot(rng, 2 * d_in, d_out)
            d_in = d_out
    flat = topology.joint_count * hp["joint_widths"][-1] + topology.bone_count * hp["bone_widths"][-1]
    hw = hp["head_width"]
    out = 3 * topology.joint_count
    params["head.0.w"] = _glorot(rng, flat, hw)
    params["head.0.b"] = np.zeros(hw)
    params["head.1.w"] = _glorot(rng, hw, out)
    params["head.1.b"] = np.zeros(out)
    return params, hp


@dataclass
class GcnInputs:
    """Preprocessed, batched network inputs (arrays, no gradient)."""

    joint_feats: np.ndarray  # (B, n, 3)
    bone_feats: np.ndarray  # (B, m, 3)
    joint_adj: np.ndarray  # (B, n, n), column-normalised
    bone_adj: np.ndarray  # (B, m, m), column-normalised

    def __len__(self) -> int:
        return self.joint_feats.shape[0]

    def subset(self, idx: np.ndarray) -> GcnInputs:
        return GcnInputs(self.joint_feats[idx], self.bone_feats[idx], self.joint_adj[idx], self.bone_adj[idx])


def prepare_inputs(
    joints2d: np.ndarray, joint_conf: np.ndarray, bone_conf: np.ndarray, mats: SkeletonMatrices
) -> GcnInputs:
    """Root-centre and scale-normalise the 2D joints and build both adjacencies.

    Degenerate poses (all joints on the root) are fed as zeros.
    """
    joints2d = np.asarray(joints2d, dtype=np.float64)
    p, _, _ = normalize_batch(joints2d, mats.topology.root_index)
    p = np.nan_to_num(p, nan=0.0)
    jc = np.clip(np.asarray(joint_conf, dtype=np.float64), 0.0, 1.0)
    bc = np.clip(np.asarray(bone_conf, dtype=np.float64), 0.0, 1.0)
    bones = bone_features(p, mats.incidence)
    joint_feats = np.concatenate([p, jc[..., None]], axis=-1)
    bone_feats = np.concatenate([bones, bc[..., None]], axis=-1)
    ja = normalize_columns(jc[..., :, None] * mats.joint_decay)
    ba = normalize_columns(bc[..., :, None] * mats.bone_decay)
    return GcnInputs(joint_feats, bone_feats, ja, ba)


def _centering_matrix(n: int, root: int) -> np.ndarray:
    m = np.eye(n)
    m[:, root] -= 1.0
    return m


def gcn_network(params: Mapping[str, Tensor], inputs: GcnInputs, hyper: Mapping[str, Any], root: int) -> Tensor:
    """Batched forward pass; returns (B, n, 3) root-centred poses in network units (metres)."""
    act, slope = hyper["activation"], hyper["slope"]
    b = len(inputs)
    streams = []
    for stream, feats, adj in (
        ("joint", inputs.joint_feats, inputs.joint_adj),
        ("bone", inputs.bone_feats, inputs.bone_adj),
    ):
        h = Tensor(feats)
        a = Tensor(adj)
        for i in range(len(hyper[f"{stream}_widths"])):
            h = sage_layer(h, a, params[f"{stream}.{i}.w"], act, slope)
        streams.append(dc.reshape(h, (b, -1)))
    z = dc.concat_features(streams[0], streams[1])
    z = dc.activation(dc.matmul(z, params["head.0.w"]) + params["head.0.b"], act, slope)
    z = dc.matmul(z, params["head.1.w"]) + params["head.1.b"]
    n = hyper["joint_count"]
    pose = dc.reshape(z, (b, n, 3))
    return dc.matmul(Tensor(_centering_matrix(n, root)), pose)


def gcn_predict(
    params: ParamStore, hyper: Mapping[str, Any], inputs: GcnInputs, root: int, batch: int = 512
) -> np.ndarray:
    """Inference in millimetres for an arbitrary number of samples."""
    consts = params.constants()
    out = []
    for start in range(0, len(inputs), batch):
        sl = np.arange(start, min(start + batch, len(inputs)))
        out.append(gcn_network(consts, inputs.subset(sl), hyper, root).data)
    if not out:
        return np.zeros((0, hyper["joint_count"], 3))
    return np.concatenate(out) * hyper["output_scale"]


def gcn_forward(obs: ObservedPose2D, params: ParamStore, hyper: Mapping[str, Any], mats: SkeletonMatrices) -> Pose3D:
    n = mats.topology.joint_count
    if obs.joints2d.shape[0] != n or obs.bone_conf.shape != (mats.topology.bone_count,):
        raise ShapeError(f"observation does not match the {n}-joint topology")
    if hyper.get("joint_count", n) != n:
        raise ShapeError(f"model expects {hyper['joint_count']} joints, topology has {n}")
    inputs = prepare_inputs(obs.joints2d[None], obs.joint_conf[None], obs.bone_conf[None], mats)
    pose = gcn_predict(params, hyper, inputs, mats.topology.root_index)[0]
    return Pose3D(pose, PERSON)


def gcn_loss(pred: Pose3D, gt: Pose3D) -> float:
    """Squared L2 distance summed over joints."""
    if pred.frame != PERSON or gt.frame != PERSON:
        raise ValidationError("gcn_loss compares person-centric poses")
    if pred.joints.shape != gt.joints.shape:
        raise ValidationError(f"joint count mismatch: {pred.joints.shape} vs {gt.joints.shape}")
    d = pred.joints - gt.joints
    return float(np.sum(d * d))


def batch_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean over the batch of per-sample squared L2 pose error."""
    return dc.scale(dc.squared_error(pred, target), 1.0 / pred.shape[0])


def augment_batch(
    gt2d: np.ndarray, rng: np.random.Generator, noise_gain: float, root: int, bone_index: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Corrupt ground-truth 2D poses with a random confidence per joint.

    Each joint draws c ~ U[0, 1] and gets isotropic Gaussian noise with
    std (1 - c) * noise_gain * pose_scale; bone confidence is the lower of its
    endpoints'. ``bone_index`` is the (m, 2) parent/child array.
    """
    gt2d = np.asarray(gt2d, dtype=np.float64)
    _, s, _ = normalize_batch(gt2d, root)
    s = np.nan_to_num(s, nan=0.0)
    c = rng.uniform(0.0, 1.0, size=gt2d.shape[:-1])
    noise = rng.standard_normal(gt2d.shape)
    std = (1.0 - c) * noise_gain * s[..., None]
    joints = gt2d + noise * std[..., None]
    paf = np.minimum(c[..., bone_index[:, 0]], c[..., bone_index[:, 1]])
    return joints, c, paf


def augment_sample(gt2d: ObservedPose2D | np.ndarray, rng_seed: int, topology: SkeletonTopology, noise_gain: float = 0.05) -> ObservedPose2D:
    joints = gt2d.joints2d if isinstance(gt2d, ObservedPose2D) else np.asarray(gt2d)
    rng = np.random.default_rng(rng_seed)
    bones = np.asarray(topology.bones, dtype=np.int64).reshape(-1, 2)
    j, c, paf = augment_batch(joints, rng, noise_gain, topology.root_index, bones)
    return ObservedPose2D(j, c, paf)
