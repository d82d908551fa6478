"""Sequence JSONL files: a header line (topology, camera) followed by one line per frame."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .camera import CameraModel
from .diffcore import atomic_write_text
from .errors import ValidationError
from .fusion import TrackedSequence
from .skeleton import SkeletonTopology
from .synthgen import RenderedScene

FORMAT_VERSION = 1
OBSERVATION = "observation"
PREDICTION = "prediction"


@dataclass
class SequenceFile:
    topology: SkeletonTopology
    camera: CameraModel
    frames: list[dict[str, Any]]
    kind: str = OBSERVATION
    meta: dict[str, Any] = field(default_factory=dict)

    def header(self) -> dict[str, Any]:
        doc = {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "topology": self.topology.to_dict(),
            "camera": self.camera.to_dict(),
        }
        if self.meta:
            doc["meta"] = self.meta
        return doc

    def dumps(self) -> str:
        lines = [json.dumps(self.header(), separators=(",", ":"))]
        lines.extend(json.dumps(fr, separators=(",", ":")) for fr in self.frames)
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        atomic_write_text(path, self.dumps())

    def person_ids(self) -> list[int]:
        ids = {p["id"] for fr in self.frames for p in fr["persons"]}
        return sorted(ids)

    def tracks(self) -> list[TrackedSequence]:
        """Group observations by person id into time-ordered tracks."""
        if self.kind != OBSERVATION:
            raise ValidationError("only observation files can be split into input tracks")
        by_id: dict[int, list[tuple[int, dict[str, Any]]]] = {}
        for fr in self.frames:
            for p in fr["persons"]:
                by_id.setdefault(int(p["id"]), []).append((int(fr["t"]), p))
        out = []
        for pid in sorted(by_id):
            rows = sorted(by_id[pid], key=lambda r: r[0])
            gt = [r[1].get("gt3d_cam") for r in rows]
            gt3d = np.asarray(gt, dtype=np.float64) if all(g is not None for g in gt) else None
            out.append(TrackedSequence(
                person_id=pid,
                t=np.array([r[0] for r in rows]),
                joints2d=np.asarray([r[1]["joints2d"] for r in rows], dtype=np.float64),
                conf=np.asarray([r[1]["conf"] for r in rows], dtype=np.float64),
                paf_conf=np.asarray([r[1]["paf_conf"] for r in rows], dtype=np.float64),
                occluded=np.asarray([bool(r[1].get("occluded", False)) for r in rows]),
                gt3d=gt3d,
            ))
        return out


def _parse_lines(lines: Iterable[str], source: str) -> SequenceFile:
    it = (ln for ln in lines if ln.strip())
    try:
        header = json.loads(next(it))
    except StopIteration:
        raise ValidationError(f"{source}: empty sequence file") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"{source}: unsupported format_version {header.get('format_version')!r}")
    topo = SkeletonTopology.from_dict(header["topology"])
    cam = CameraModel.from_dict(header["camera"])
    frames = [json.loads(ln) for ln in it]
    ts = [fr["t"] for fr in frames]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValidationError(f"{source}: frame indices must be strictly increasing")
    return SequenceFile(topo, cam, frames, header.get("kind", OBSERVATION), header.get("meta", {}))


def read_sequence(path: str | Path) -> SequenceFile:
    with open(path) as fh:
        return _parse_lines(fh, str(path))


def loads_sequence(text: str) -> SequenceFile:
    return _parse_lines(text.splitlines(), "<string>")


def _round_list(a: np.ndarray) -> list:
    return np.asarray(a, dtype=np.float64).tolist()


def scene_to_file(scene: RenderedScene, topology: SkeletonTopology, meta: dict[str, Any] | None = None) -> SequenceFile:
    P, T = scene.conf.shape[:2]
    frames = []
    for t in range(T):
        persons = []
        for p in range(P):
            persons.append({
                "id": int(scene.truth.person_ids[p]),
                "joints2d": _round_list(scene.joints2d[p, t]),
                "conf": _round_list(scene.conf[p, t]),
                "paf_conf": _round_list(scene.paf_conf[p, t]),
                "occluded": bool(scene.pose_occluded[p, t]),
                "gt3d_cam": _round_list(scene.truth.joints3d[p, t]),
            })
        frames.append({"t": t, "persons": persons})
    return SequenceFile(topology, scene.truth.camera, frames, OBSERVATION, dict(meta or {}))


def parse_person_range(text: str | int) -> tuple[int, int]:
    """'2' -> (2, 2); '2-3' -> (2, 3)."""
    parts = str(text).split("-")
    try:
        lo, hi = (int(parts[0]), int(parts[-1])) if len(parts) <= 2 else (None, None)
    except ValueError:
        lo = hi = None
    if lo is None or hi is None or not 1 <= lo <= hi <= 6:
        raise ValidationError(f"persons must be an integer or range within 1..6, got {text!r}")
    return lo, hi


def generate_corpus(
    scenes: int,
    persons: tuple[int, int] = (2, 2),
    frames: int = 64,
    occlusion: str = "none",
    seed: int = 0,
    focal: float = 1000.0,
    noise_gain: float = 0.05,
    topology: SkeletonTopology | None = None,
) -> list[tuple[str, SequenceFile]]:
    """Named synthetic scenes; scene ``i`` depends only on (seed, i)."""
    from . import synthgen as S

    if scenes < 1:
        raise ValidationError(f"scenes must be at least 1, got {scenes}")
    topology = topology or SkeletonTopology.default()
    out = []
    for i in range(scenes):
        rng = np.random.default_rng([seed, i])
        count = int(rng.integers(persons[0], persons[1] + 1))
        scene_seed = int(rng.integers(0, 2**31 - 1))
        cfg = S.SceneConfig(
            person_count=count, frame_count=frames, focal=focal, occlusion=occlusion,
            noise_gain=noise_gain, rng_seed=scene_seed,
        )
        cfg.validate()
        scene = S.render(S.generate(cfg, topology), cfg, topology)
        meta = {"scene": i, "config": cfg.to_dict()}
        out.append((f"scene_{i:04d}.jsonl", scene_to_file(scene, topology, meta)))
    return out
