from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from skelift import tcn as K
from skelift.diffcore import save_checkpoint
from skelift.errors import ConfigurationError
from skelift.fusion import TrackedSequence
from skelift.pipeline import ModelBundle, PipelineConfig, infer, output_frames, worker_count
from skelift.skeleton import SkeletonTopology

from conftest import small_bundle_for

SINGLE = PipelineConfig(threads=1)


def run(file, bundle, config=SINGLE):
    return infer(file.tracks(), bundle, file.camera, file.topology, config)


def results_equal(a, b):
    fields = ("pose_rel", "root", "pose_cam", "weight", "root_depth", "root_velocity")
    return all(
        getattr(x, f).tobytes() == getattr(y, f).tobytes() for x, y in zip(a.tracks, b.tracks) for f in fields
    ) and all(x.source == y.source for x, y in zip(a.tracks, b.tracks))


def test_no_occlusion_uses_depth_path(plain_file, small_bundle):
    out = run(plain_file, small_bundle)
    for tr in out.tracks:
        assert not tr.occluded.any()
        assert set(tr.source) == {"depth"}
        np.testing.assert_array_equal(tr.weight, 1.0)
        np.testing.assert_array_equal(tr.root, tr.root_depth)
        assert np.all(np.isnan(tr.root_velocity))


def test_camera_pose_is_relative_pose_plus_root(crossing_file, small_bundle):
    focal = crossing_file.camera.focal
    for tr in run(crossing_file, small_bundle).tracks:
        root_cam = tr.root * [1.0, 1.0, focal]
        np.testing.assert_array_equal(tr.pose_cam, tr.pose_rel + root_cam[:, None, :])
        np.testing.assert_allclose(tr.pose_rel[:, 0], 0.0, atol=1e-9)


def test_fused_root_between_paths(crossing_file, small_bundle):
    out = run(crossing_file, small_bundle)
    bins = small_bundle.bins
    seen_interval = False
    for tr in out.tracks:
        inside = ~np.isnan(tr.root_velocity[:, 0])
        seen_interval |= inside.any()
        lo = np.minimum(tr.root_depth[inside], tr.root_velocity[inside])
        hi = np.maximum(tr.root_depth[inside], tr.root_velocity[inside])
        assert np.all(tr.root[inside] >= lo - 1e-12) and np.all(tr.root[inside] <= hi + 1e-12)
        assert np.all((tr.root_depth[:, 2] >= bins.centers[0]) & (tr.root_depth[:, 2] <= bins.centers[-1]))
        assert np.all((tr.weight > 0) & (tr.weight <= 1))
        assert set(tr.source) <= {"depth", "fused", "velocity"}
    assert seen_interval


def test_velocity_path_recursion(crossing_file, small_bundle):
    vel = small_bundle.velocity
    n_hist = vel.hyper["window"]
    for tr in run(crossing_file, small_bundle).tracks:
        inside = ~np.isnan(tr.root_velocity[:, 0])
        chain = np.where(inside[:, None], tr.root_velocity, tr.root_depth)
        for t in np.flatnonzero(inside):
            idx = np.clip(np.arange(t - n_hist - 1, t), 0, t - 1)
            hist = chain[idx]
            v = K.velocity_tcn_predict(vel.params, vel.hyper, hist[None, 1:], np.diff(hist, axis=0)[None])[0]
            np.testing.assert_allclose(tr.root_velocity[t], chain[t - 1] + v, rtol=0, atol=1e-12)


def test_deterministic_and_thread_independent(crossing_file, small_bundle):
    a = run(crossing_file, small_bundle)
    b = run(crossing_file, small_bundle)
    c = run(crossing_file, small_bundle, PipelineConfig(threads=4))
    assert results_equal(a, b) and results_equal(a, c)


def test_track_order_does_not_matter(crossing_file, small_bundle):
    tracks = crossing_file.tracks()
    cam, topo = crossing_file.camera, crossing_file.topology
    fwd = infer(tracks, small_bundle, cam, topo, SINGLE)
    rev = infer(tracks[::-1], small_bundle, cam, topo, SINGLE)
    rev.tracks.reverse()
    assert results_equal(fwd, rev)


def test_static_input_gives_constant_output(plain_file, small_bundle):
    tr = plain_file.tracks()[0]
    T = 20
    still = TrackedSequence(
        tr.person_id, np.arange(T), np.repeat(tr.joints2d[:1], T, 0), np.repeat(tr.conf[:1], T, 0),
        np.repeat(tr.paf_conf[:1], T, 0), np.zeros(T, dtype=bool),
    )
    res = infer([still], small_bundle, plain_file.camera, plain_file.topology, SINGLE).tracks[0]
    for arr in (res.pose_cam, res.root):
        assert np.all(arr == arr[0])


def test_skipped_frame_repeats_previous(crossing_file, small_bundle):
    tr = crossing_file.tracks()[0]
    conf = tr.conf.copy()
    conf[10] = 0.0
    gap = dataclasses.replace(tr, conf=conf)
    res = infer([gap], small_bundle, crossing_file.camera, crossing_file.topology, SINGLE).tracks[0]
    assert res.skipped[10] and res.skipped.sum() == 1
    np.testing.assert_array_equal(res.pose_cam[10], res.pose_cam[9])
    np.testing.assert_array_equal(res.root[10], res.root[9])


def test_without_velocity_uses_depth_only(crossing_file, small_bundle):
    out = run(crossing_file, small_bundle, PipelineConfig(use_velocity=False, threads=1))
    for tr in out.tracks:
        np.testing.assert_array_equal(tr.root, tr.root_depth)


def test_passthrough_requires_checkpoint(crossing_file, small_bundle):
    bundle = dataclasses.replace(small_bundle, passthrough=None)
    with pytest.raises(ConfigurationError):
        run(crossing_file, bundle, PipelineConfig(lifter="passthrough", threads=1))
    with pytest.raises(ConfigurationError):
        run(crossing_file, small_bundle, PipelineConfig(lifter="mlp", threads=1))


def test_topology_mismatch_rejected(crossing_file):
    names = [f"j{i}" for i in range(5)]
    other = SkeletonTopology(names, [(0, 1), (1, 2), (2, 3), (3, 4)], 0)
    bundle = small_bundle_for(other)
    with pytest.raises(ConfigurationError):
        run(crossing_file, bundle)


def test_load_checkpoints(tmp_path, small_bundle):
    paths = {}
    for name, model, key in (("gcn", small_bundle.gcn, "gcn"), ("joint", small_bundle.joint, "tcn_joint"),
                             ("root", small_bundle.root, "tcn_root"), ("velocity", small_bundle.velocity, "tcn_velocity")):
        paths[name] = tmp_path / f"{name}.json"
        save_checkpoint(paths[name], key, model.params, model.hyper)
    loaded = ModelBundle.load(**paths)
    assert all(loaded.gcn.params[k].tobytes() == v.tobytes() for k, v in small_bundle.gcn.params.items())
    missing = dict(paths, root=tmp_path / "nope.json")
    with pytest.raises(ConfigurationError, match="nope.json"):
        ModelBundle.load(**missing)
    swapped = dict(paths, root=paths["joint"])
    with pytest.raises(ConfigurationError):
        ModelBundle.load(**swapped)


def test_worker_count(monkeypatch):
    assert worker_count(3) == 3
    monkeypatch.setenv("SKELIFT_THREADS", "2")
    assert worker_count() == 2
    monkeypatch.setenv("SKELIFT_THREADS", "many")
    with pytest.raises(ConfigurationError):
        worker_count()


def test_output_frames(crossing_file, small_bundle):
    frames = output_frames(run(crossing_file, small_bundle))
    assert [f["t"] for f in frames] == list(range(48))
    for f in frames:
        assert [p["id"] for p in f["persons"]] == [0, 1]
        for p in f["persons"]:
            assert p["source"] in ("depth", "fused", "velocity")
            assert np.asarray(p["pose3d_cam"]).shape == (17, 3)
