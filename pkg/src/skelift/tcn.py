"""Temporal networks: joint-TCN (pose smoothing), velocity-TCN (root motion), root-TCN (Z/f depth)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from . import diffcore as dc
from .camera import normalize_batch
from .diffcore import ParamStore, Tensor
from .errors import ShapeError, ValidationError
from .gcn import _centering_matrix, _glorot, gcn_loss
from .poses import PERSON, Pose3D

KINDS = ("joint", "velocity", "root")

# Root state is (X mm, Y mm, Z/f). These divisors bring a walking person's
# per-frame motion to order one: 100 mm laterally, 0.1 Z/f (100 mm at f=1000).
ROOT_UNITS = np.array([100.0, 100.0, 0.1])


@dataclass(frozen=True)
class DepthBins:
    count: int = 60
    lo: float = 0.5
    hi: float = 8.0

    def __post_init__(self) -> None:
        if self.count < 2:
            raise ValidationError(f"need at least two depth bins, got {self.count}")
        if not self.lo < self.hi:
            raise ValidationError(f"depth bin range [{self.lo}, {self.hi}] is empty")

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.count

    @property
    def centers(self) -> np.ndarray:
        return self.lo + (np.arange(self.count) + 0.5) * self.width

    def to_dict(self) -> dict[str, Any]:
        return {"count": self.count, "lo": self.lo, "hi": self.hi}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> DepthBins:
        return cls(int(doc["count"]), float(doc["lo"]), float(doc["hi"]))


def default_hyper(kind: str, joint_count: int = 17, bins: DepthBins | None = None) -> dict[str, Any]:
    if kind == "joint":
        return {
            "kind": "joint", "in_features": 3 * joint_count, "out_features": 3 * joint_count,
            "widths": [128, 128, 128], "kernels": [3, 3, 3], "dilations": [1, 1, 2],
            "activation": "leaky_relu", "slope": 0.1, "joint_count": joint_count,
            "output_scale": 1000.0,
        }
    if kind == "velocity":
        return {
            "kind": "velocity", "in_features": 6, "out_features": 3,
            "widths": [64, 64, 64], "kernels": [2, 2, 2], "dilations": [1, 2, 4],
            "activation": "leaky_relu", "slope": 0.1,
        }
    if kind == "root":
        bins = bins or DepthBins()
        return {
            "kind": "root", "in_features": 2 * joint_count + 3, "out_features": bins.count,
            "widths": [128, 128, 128], "kernels": [3, 3, 3], "dilations": [1, 1, 2],
            "activation": "leaky_relu", "slope": 0.1, "joint_count": joint_count,
            "bins": bins.to_dict(), "center_scale": 1000.0, "s_scale": 100.0,
        }
    raise ValidationError(f"unknown TCN kind {kind!r}")


def receptive_field(hyper: Mapping[str, Any]) -> int:
    return 1 + sum((k - 1) * d for k, d in zip(hyper["kernels"], hyper["dilations"]))


def init_tcn(kind: str, hyper: Mapping[str, Any] | None = None, seed: int = 0, joint_count: int = 17) -> tuple[ParamStore, dict[str, Any]]:
    hp = {**default_hyper(kind, joint_count), **(hyper or {})}
    if not (len(hp["widths"]) == len(hp["kernels"]) == len(hp["dilations"])):
        raise ValidationError("widths, kernels and dilations must have equal length")
    hp["window"] = receptive_field(hp)
    rng = np.random.default_rng(seed)
    params = ParamStore()
    c_in = hp["in_features"]
    for i, (w, k) in enumerate(zip(hp["widths"], hp["kernels"])):
        params[f"block.{i}.kernel"] = _glorot(rng, k * c_in, w).reshape(k, c_in, w)
        c_in = w
    params["head.w"] = _glorot(rng, c_in, hp["out_features"])
    params["head.b"] = np.zeros(hp["out_features"])
    return params, hp


def tcn_network(params: Mapping[str, Tensor], x: np.ndarray | Tensor, hyper: Mapping[str, Any]) -> Tensor:
    """(B, T, C_in) with T equal to the receptive field -> (B, out_features)."""
    h = dc.as_tensor(x)
    if h.shape[-2] != hyper["window"]:
        raise ShapeError(f"{hyper['kind']}-TCN needs a window of {hyper['window']} frames, got {h.shape[-2]}")
    if h.shape[-1] != hyper["in_features"]:
        raise ShapeError(f"{hyper['kind']}-TCN expects {hyper['in_features']} features, got {h.shape[-1]}")
    for i, d in enumerate(hyper["dilations"]):
        h = dc.temporal_conv(h, params[f"block.{i}.kernel"], d)
        h = dc.activation(h, hyper["activation"], hyper["slope"])
    h = dc.take_time(h, -1)
    return dc.matmul(h, params["head.w"]) + params["head.b"]


def _predict(params: ParamStore, x: np.ndarray, hyper: Mapping[str, Any], batch: int = 1024) -> np.ndarray:
    consts = params.constants()
    out = [tcn_network(consts, x[s : s + batch], hyper).data for s in range(0, len(x), batch)]
    if not out:
        return np.zeros((0, hyper["out_features"]))
    return np.concatenate(out)


# window construction


def centered_windows(x: np.ndarray, half: int) -> np.ndarray:
    """(T, ...) -> (T, 2*half+1, ...) with edge replication at both ends."""
    T = x.shape[0]
    idx = np.clip(np.arange(T)[:, None] + np.arange(-half, half + 1)[None, :], 0, T - 1)
    return x[idx]


def causal_windows(x: np.ndarray, n: int) -> np.ndarray:
    """(T, ...) -> (T, n, ...) holding frames t-n .. t-1, edge-replicated at the start."""
    T = x.shape[0]
    idx = np.clip(np.arange(T)[:, None] + np.arange(-n, 0)[None, :], 0, T - 1)
    return x[idx]


# joint-TCN


def joint_features(poses_mm: np.ndarray, hyper: Mapping[str, Any]) -> np.ndarray:
    """(..., T, n, 3) person-centric poses in mm -> (..., T, 3n) network inputs."""
    p = np.asarray(poses_mm, dtype=np.float64) / hyper["output_scale"]
    return p.reshape(*p.shape[:-2], -1)


def joint_network(params: Mapping[str, Tensor], feats: np.ndarray, hyper: Mapping[str, Any], root: int) -> Tensor:
    out = tcn_network(params, feats, hyper)
    n = hyper["joint_count"]
    pose = dc.reshape(out, (out.shape[0], n, 3))
    return dc.matmul(Tensor(_centering_matrix(n, root)), pose)


def joint_tcn_predict(params: ParamStore, hyper: Mapping[str, Any], windows_mm: np.ndarray, root: int = 0, batch: int = 1024) -> np.ndarray:
    """(B, T, n, 3) mm windows -> (B, n, 3) mm central-frame poses."""
    consts = params.constants()
    feats = joint_features(windows_mm, hyper)
    out = [joint_network(consts, feats[s : s + batch], hyper, root).data for s in range(0, len(feats), batch)]
    if not out:
        return np.zeros((0, hyper["joint_count"], 3))
    return np.concatenate(out) * hyper["output_scale"]


def joint_tcn_forward(window: np.ndarray, params: ParamStore, hyper: Mapping[str, Any], root: int = 0) -> Pose3D:
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 3 or window.shape[0] != hyper["window"]:
        raise ShapeError(f"joint-TCN needs a ({hyper['window']}, n, 3) window, got {window.shape}")
    return Pose3D(joint_tcn_predict(params, hyper, window[None], root)[0], PERSON)


# velocity-TCN


def velocity_features(positions: np.ndarray, velocities: np.ndarray) -> np.ndarray:
    """(..., n, 3) root positions and velocities -> (..., n, 6) scaled inputs.

    Positions are expressed relative to the most recent frame of the window.
    """
    positions = np.asarray(positions, dtype=np.float64)
    rel = positions - positions[..., -1:, :]
    return np.concatenate([rel / ROOT_UNITS, np.asarray(velocities) / ROOT_UNITS], axis=-1)


def velocity_tcn_predict(params: ParamStore, hyper: Mapping[str, Any], positions: np.ndarray, velocities: np.ndarray) -> np.ndarray:
    return _predict(params, velocity_features(positions, velocities), hyper) * ROOT_UNITS


def velocity_tcn_forward(positions: np.ndarray, velocities: np.ndarray, params: ParamStore, hyper: Mapping[str, Any]) -> np.ndarray:
    """Root history P^{t-n..t-1} and V^{t-n..t-1} (each (n, 3)) -> V^t."""
    positions = np.asarray(positions, dtype=np.float64)
    velocities = np.asarray(velocities, dtype=np.float64)
    n = hyper["window"]
    if positions.shape != (n, 3) or velocities.shape != (n, 3):
        raise ShapeError(f"velocity-TCN needs two ({n}, 3) windows, got {positions.shape} and {velocities.shape}")
    return velocity_tcn_predict(params, hyper, positions[None], velocities[None])[0]


def propagate(prev: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.asarray(prev, dtype=np.float64) + np.asarray(v, dtype=np.float64)


# root-TCN


def root_features(joints2d: np.ndarray, center: np.ndarray, hyper: Mapping[str, Any], root: int = 0) -> np.ndarray:
    """(..., n, 2) pixel poses -> (..., 2n + 3) per-frame inputs: p, c, s (scaled).

    Degenerate poses yield NaN features; the caller must filter them.
    """
    p, s, c = normalize_batch(joints2d, root)
    c_feat = (c - np.asarray(center)) / hyper["center_scale"]
    s_feat = s[..., None] / hyper["s_scale"]
    return np.concatenate([p.reshape(*p.shape[:-2], -1), c_feat, s_feat], axis=-1)


def root_tcn_logits(params: ParamStore, hyper: Mapping[str, Any], feats: np.ndarray) -> np.ndarray:
    return _predict(params, feats, hyper)


def root_tcn_forward(window_feats: np.ndarray, params: ParamStore, hyper: Mapping[str, Any]) -> np.ndarray:
    """(2n+1, 2J+3) window of normalised-pose features -> N depth-bin logits."""
    window_feats = np.asarray(window_feats, dtype=np.float64)
    if window_feats.ndim != 2:
        raise ShapeError(f"root-TCN expects a (T, C) window, got {window_feats.shape}")
    return root_tcn_logits(params, hyper, window_feats[None])[0]


def soft_argmax_tensor(logits: Tensor, bins: DepthBins) -> Tensor:
    if logits.shape[-1] != bins.count:
        raise ShapeError(f"{logits.shape[-1]} logits for {bins.count} depth bins")
    probs = dc.softmax(logits)
    flat = dc.reshape(probs, (-1, bins.count))
    return dc.reshape(dc.matmul(flat, Tensor(bins.centers[:, None])), probs.shape[:-1])


def soft_argmax_depth(logits: np.ndarray, bins: DepthBins) -> np.ndarray | float:
    """Probability-weighted mean of the bin centres."""
    out = soft_argmax_tensor(Tensor(logits), bins).data
    return float(out) if out.ndim == 0 else out


# losses


def tcn_point_loss(pred: Pose3D, gt: Pose3D) -> float:
    return gcn_loss(pred, gt)


def root_loss(pred: float, gt: float) -> float:
    return float((pred - gt) ** 2)


def batch_root_loss(pred: Tensor, gt: np.ndarray) -> Tensor:
    return dc.scale(dc.squared_error(pred, gt), 1.0 / pred.shape[0])
