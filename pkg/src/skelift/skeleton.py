"""Skeleton topology, hop distances and the bone incidence matrix."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .errors import TopologyError

FORMAT_VERSION = 1


@dataclass(frozen=True)
class SkeletonTopology:
    """Tree-shaped skeleton with directed (parent, child) bones.

    Attributes:
        joint_names: ordered joint names; index in this list is the joint id
        bones: (parent, child) joint index pairs
        root_index: index of the pelvis / root joint
    """

    joint_names: tuple[str, ...]
    bones: tuple[tuple[int, int], ...]
    root_index: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "bones", tuple((int(p), int(c)) for p, c in self.bones))
        self.validate()

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    @property
    def bone_count(self) -> int:
        return len(self.bones)

    def validate(self) -> None:
        n = self.joint_count
        if n < 1:
            raise TopologyError("skeleton needs at least one joint")
        if not 0 <= self.root_index < n:
            raise TopologyError(f"root index {self.root_index} out of range for {n} joints")
        for p, c in self.bones:
            if not (0 <= p < n and 0 <= c < n):
                raise TopologyError(f"bone ({p}, {c}) references a joint outside 0..{n - 1}")
            if p == c:
                raise TopologyError(f"bone ({p}, {c}) is a self loop")
        # A tree on n vertices has exactly n-1 edges and is connected.
        if len(self.bones) != n - 1:
            raise TopologyError(
                f"a tree on {n} joints needs {n - 1} bones, got {len(self.bones)}"
            )
        seen = _bfs_distances(self._neighbors, 0)
        if np.any(seen < 0):
            raise TopologyError("skeleton graph is disconnected")

    @cached_property
    def _neighbors(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.joint_count)]
        for p, c in self.bones:
            nbrs[p].append(c)
            nbrs[c].append(p)
        return nbrs

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "joints": list(self.joint_names),
            "bones": [list(b) for b in self.bones],
            "root": self.root_index,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> SkeletonTopology:
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise TopologyError(f"unsupported topology format_version {version!r}")
        return cls(tuple(doc["joints"]), tuple(tuple(b) for b in doc["bones"]), int(doc["root"]))

    @classmethod
    def load(cls, path: str | Path) -> SkeletonTopology:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def default(cls) -> SkeletonTopology:
        """The shipped 17-joint, 16-bone skeleton rooted at the pelvis."""
        text = resources.files("skelift").joinpath("data/h36m17.json").read_text()
        return cls.from_dict(json.loads(text))


def _bfs_distances(neighbors: list[list[int]], start: int) -> np.ndarray:
    dist = np.full(len(neighbors), -1, dtype=np.int64)
    dist[start] = 0
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in neighbors[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def hop_distance_matrix(topology: SkeletonTopology) -> np.ndarray:
    """Number of bones on the unique tree path between every pair of joints."""
    nbrs = topology._neighbors
    return np.stack([_bfs_distances(nbrs, i) for i in range(topology.joint_count)])


def incidence_matrix(topology: SkeletonTopology) -> np.ndarray:
    """(bones, joints) matrix with -1 at each bone's parent and +1 at its child."""
    inc = np.zeros((topology.bone_count, topology.joint_count))
    for b, (p, c) in enumerate(topology.bones):
        inc[b, p] = -1.0
        inc[b, c] = 1.0
    return inc


def bone_hop_matrix(topology: SkeletonTopology) -> np.ndarray:
    """Hop distances on the line graph, where two bones are adjacent iff they share a joint."""
    m = topology.bone_count
    nbrs: list[list[int]] = [[] for _ in range(m)]
    for a in range(m):
        for b in range(a + 1, m):
            if set(topology.bones[a]) & set(topology.bones[b]):
                nbrs[a].append(b)
                nbrs[b].append(a)
    if m == 0:
        return np.zeros((0, 0), dtype=np.int64)
    return np.stack([_bfs_distances(nbrs, i) for i in range(m)])
