from __future__ import annotations

import numpy as np
import pytest

from skelift import gcn as G
from skelift import synthgen as S
from skelift import tcn as K
from skelift import train as TR
from skelift.formats import scene_to_file
from skelift.pipeline import Model, ModelBundle
from skelift.skeleton import SkeletonTopology

SMALL_GCN = {"joint_widths": [8, 8], "bone_widths": [8, 8], "head_width": 16}
SMALL_TCN = {"widths": [8, 8, 8]}

# acceptance outcomes, filled by test_acceptance and echoed in the terminal summary
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def topo() -> SkeletonTopology:
    return SkeletonTopology.default()


@pytest.fixture(scope="session")
def mats(topo) -> G.SkeletonMatrices:
    return G.SkeletonMatrices.from_topology(topo)


def small_bundle_for(topo: SkeletonTopology, seed: int = 0) -> ModelBundle:
    n = topo.joint_count
    gp, ghp = G.init_gcn(topo, SMALL_GCN, seed=seed)
    models = {}
    for kind in ("joint", "velocity", "root"):
        p, hp = K.init_tcn(kind, SMALL_TCN, seed=seed, joint_count=n)
        models[kind] = Model(p, hp)
    pp, php = TR.init_passthrough(topo, width=16, seed=seed)
    return ModelBundle(Model(gp, ghp), models["joint"], models["root"], models["velocity"], Model(pp, php))


@pytest.fixture(scope="session")
def small_bundle(topo) -> ModelBundle:
    """Untrained small networks: enough for structural pipeline properties."""
    return small_bundle_for(topo)


def make_scene(topo, occlusion="none", persons=2, frames=32, seed=5, **kw):
    cfg = S.SceneConfig(person_count=persons, frame_count=frames, occlusion=occlusion, rng_seed=seed, **kw)
    return cfg, S.render(S.generate(cfg, topo), cfg, topo)


@pytest.fixture(scope="session")
def crossing_file(topo):
    _, scene = make_scene(topo, "crossing", persons=2, frames=48, seed=3)
    return scene_to_file(scene, topo)


@pytest.fixture(scope="session")
def plain_file(topo):
    _, scene = make_scene(topo, "none", persons=2, frames=32, seed=4)
    return scene_to_file(scene, topo)


@pytest.fixture(scope="session")
def tiny_sets(topo):
    files = [scene_to_file(make_scene(topo, "crossing", persons=2, frames=24, seed=s)[1], topo) for s in range(4)]
    return TR.TrackSet.from_files(files[:3]), TR.TrackSet.from_files(files[3:])


def rng_for(*seed: int) -> np.random.Generator:
    return np.random.default_rng(list(seed))
