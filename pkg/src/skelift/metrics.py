"""MPJPE, Procrustes-aligned MPJPE, PCK / PCK_abs, AUC and root AP, all in millimetres."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .errors import ValidationError

PCK_MM = 150.0
ABS_MM = 250.0
AUC_THRESHOLDS = np.arange(0.0, 150.0 + 1e-9, 5.0)


def _pair(pred: Any, gt: Any) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(getattr(pred, "joints", pred), dtype=np.float64)
    g = np.asarray(getattr(gt, "joints", gt), dtype=np.float64)
    if p.shape != g.shape:
        raise ValidationError(f"pose shape mismatch: {p.shape} vs {g.shape}")
    return p, g


def joint_errors(pred: Any, gt: Any) -> np.ndarray:
    p, g = _pair(pred, gt)
    return np.linalg.norm(p - g, axis=-1)


def mpjpe(pred: Any, gt: Any) -> float:
    return float(joint_errors(pred, gt).mean())


def _weighted_fit(p: np.ndarray, g: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Scale * rotation + translation of ``p`` minimising the w-weighted squared error to ``g``."""
    w = w / w.sum()
    mu_p, mu_g = w @ p, w @ g
    x, y = p - mu_p, g - mu_g
    var_p = np.sum(w * np.sum(x * x, axis=1))
    if var_p < 1e-12 * max(1.0, float(np.max(np.abs(p))) ** 2):
        raise ValidationError("cannot align a pose collapsed to a point")
    u, sig, vt = np.linalg.svd((x * w[:, None]).T @ y)
    d = np.ones(3)
    if np.linalg.det(u @ vt) < 0:
        d[-1] = -1.0
    rot = (u * d) @ vt  # maps row vectors: x @ rot
    if sig[1] < 1e-9 * max(sig[0], 1e-300):
        raise ValidationError("degenerate (collinear) configuration for Procrustes alignment")
    s = np.sum(sig * d) / var_p
    return s * x @ rot + mu_g


def similarity_align(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Least-squares scale * rotation + translation of ``pred`` onto ``gt`` (no reflections)."""
    p, g = _pair(pred, gt)
    return _weighted_fit(p, g, np.ones(len(p)))


def pa_mpjpe(pred: Any, gt: Any, iterations: int = 50) -> float:
    """Mean joint error after the similarity transform that minimises that mean.

    Starts from the better of the least-squares fit and the identity, then
    refines with reweighted fits (weights 1 / error). Each reweighted step
    cannot increase the mean error, so the result never exceeds mpjpe.
    """
    p, g = _pair(pred, gt)
    best = _weighted_fit(p, g, np.ones(len(p)))
    err = float(np.linalg.norm(best - g, axis=-1).mean())
    raw = float(np.linalg.norm(p - g, axis=-1).mean())
    if raw < err:
        best, err = p, raw
    for _ in range(iterations):
        r = np.linalg.norm(best - g, axis=-1)
        if err <= 1e-12:
            break
        cand = _weighted_fit(p, g, 1.0 / np.maximum(r, 1e-9 * err))
        cand_err = float(np.linalg.norm(cand - g, axis=-1).mean())
        if not cand_err < err:
            break
        done = err - cand_err <= 1e-9 * err
        best, err = cand, cand_err
        if done:
            break
    return err


def pck(pred: Any, gt: Any, threshold_mm: float = PCK_MM) -> float:
    """Percent of joints whose error is at most the threshold."""
    return float(100.0 * np.mean(joint_errors(pred, gt) <= threshold_mm))


def pck_abs(pred: Any, gt: Any, threshold_mm: float = ABS_MM) -> float:
    return pck(pred, gt, threshold_mm)


def auc_rel(pred: Any, gt: Any, thresholds: np.ndarray = AUC_THRESHOLDS) -> float:
    err = joint_errors(pred, gt)
    return float(np.mean([100.0 * np.mean(err <= t) for t in thresholds]))


def ap_root(pred_roots: Any, gt_roots: Any, threshold_mm: float = ABS_MM) -> float:
    p = np.asarray(pred_roots, dtype=np.float64)
    g = np.asarray(gt_roots, dtype=np.float64)
    if p.shape != g.shape:
        raise ValidationError(f"{p.shape} predicted roots vs {g.shape} ground-truth roots")
    if p.size == 0:
        return 0.0
    return float(100.0 * np.mean(np.linalg.norm(p - g, axis=-1) <= threshold_mm))


def greedy_match(pred_roots: np.ndarray, gt_roots: np.ndarray) -> list[tuple[int, int]]:
    """Pair predictions to ground truth by repeatedly taking the closest remaining roots."""
    pred_roots = np.asarray(pred_roots, dtype=np.float64).reshape(-1, 3)
    gt_roots = np.asarray(gt_roots, dtype=np.float64).reshape(-1, 3)
    if len(pred_roots) == 0 or len(gt_roots) == 0:
        return []
    dist = np.linalg.norm(pred_roots[:, None] - gt_roots[None], axis=-1)
    pairs = []
    used_p, used_g = set(), set()
    for flat in np.argsort(dist, axis=None, kind="stable"):
        i, j = divmod(int(flat), dist.shape[1])
        if i in used_p or j in used_g:
            continue
        pairs.append((i, j))
        used_p.add(i)
        used_g.add(j)
    return sorted(pairs)


@dataclass
class EvalReport:
    mpjpe: float
    pa_mpjpe: float
    pck: float
    pck_abs: float
    ap_root: float
    auc_rel: float
    count: int
    per_sequence: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


REPORT_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["mpjpe", "pa_mpjpe", "pck", "pck_abs", "ap_root", "auc_rel", "count", "per_sequence"],
    "properties": {
        "mpjpe": {"type": "number", "minimum": 0},
        "pa_mpjpe": {"type": "number", "minimum": 0},
        "pck": {"type": "number", "minimum": 0, "maximum": 100},
        "pck_abs": {"type": "number", "minimum": 0, "maximum": 100},
        "ap_root": {"type": "number", "minimum": 0, "maximum": 100},
        "auc_rel": {"type": "number", "minimum": 0, "maximum": 100},
        "count": {"type": "integer", "minimum": 0},
        "per_sequence": {"type": "array", "items": {"type": "object"}},
    },
}


def evaluate_poses(
    pred_cam: np.ndarray,
    gt_cam: np.ndarray,
    root: int = 0,
    pck_mm: float = PCK_MM,
    abs_mm: float = ABS_MM,
) -> dict[str, float]:
    """Aggregate metrics over a stack of camera-centric (K, n, 3) pose pairs.

    Person-centric metrics use root-aligned copies.
    """
    pred_cam = np.asarray(pred_cam, dtype=np.float64)
    gt_cam = np.asarray(gt_cam, dtype=np.float64)
    if pred_cam.shape != gt_cam.shape:
        raise ValidationError(f"prediction stack {pred_cam.shape} vs ground truth {gt_cam.shape}")
    if len(pred_cam) == 0:
        return {"mpjpe": 0.0, "pa_mpjpe": 0.0, "pck": 0.0, "pck_abs": 0.0, "ap_root": 0.0, "auc_rel": 0.0, "count": 0}
    pred_rel = pred_cam - pred_cam[:, root : root + 1]
    gt_rel = gt_cam - gt_cam[:, root : root + 1]
    rel_err = np.linalg.norm(pred_rel - gt_rel, axis=-1)
    abs_err = np.linalg.norm(pred_cam - gt_cam, axis=-1)
    pa = [pa_mpjpe(p, g) for p, g in zip(pred_rel, gt_rel)]
    return {
        "mpjpe": float(rel_err.mean()),
        "pa_mpjpe": float(np.mean(pa)),
        "pck": float(100.0 * np.mean(rel_err <= pck_mm)),
        "pck_abs": float(100.0 * np.mean(abs_err <= abs_mm)),
        "ap_root": ap_root(pred_cam[:, root], gt_cam[:, root], abs_mm),
        "auc_rel": float(np.mean([100.0 * np.mean(rel_err <= t) for t in AUC_THRESHOLDS])),
        "count": int(len(pred_cam)),
    }
