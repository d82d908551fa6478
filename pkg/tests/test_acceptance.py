"""Acceptance criteria 1 to 11, each reported as one PASS/FAIL line in the terminal summary."""
from __future__ import annotations

import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

import conftest
from skelift import gcn as G
from skelift import metrics as M
from skelift import synthgen as S
from skelift import tcn as K
from skelift import train as TR
from skelift.camera import CameraModel, back_project, project
from skelift.cli import main
from skelift.diffcore import Tensor, load_checkpoint, save_checkpoint
from skelift.formats import generate_corpus, loads_sequence, read_sequence, scene_to_file
from skelift.fusion import OcclusionInterval, TrackedSequence, fuse_root, fusion_weight, joint_occluded, pose_occluded
from skelift.pipeline import Model, ModelBundle, PipelineConfig, infer
from skelift.skeleton import SkeletonTopology


def record(k: int, ok: bool, detail: str) -> None:
    conftest.ACCEPTANCE[k] = (bool(ok), detail)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


# 1. gradient fidelity


def test_criterion_01_gradcheck(capsys):
    t0 = time.perf_counter()
    code = main(["gradcheck", "--model", "all", "--seed", "0", "--runs", "10"])
    seconds = time.perf_counter() - t0
    out = capsys.readouterr().out
    verdicts = [line for line in out.splitlines() if " seed " in line]
    worst = {}
    for line in verdicts:
        kind, err = line.split()[0], float(line.split("max rel error ")[1].split()[0])
        worst[kind] = max(worst.get(kind, 0.0), err)
    ok = code == 0 and len(verdicts) == 40 and all(v.endswith("PASS") for v in verdicts) and seconds < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record(1, ok, f"{len(verdicts)} checks in {seconds:.1f}s, worst {detail}")


# 2. adjacency


def test_criterion_02_adjacency():
    chain = SkeletonTopology(["a", "b", "c"], [(0, 1), (1, 2)], 0)
    mats = G.SkeletonMatrices.from_topology(chain)
    conf = np.array([1.0, 0.5, 0.8])
    direct = np.array([[conf[i] * np.exp(-abs(i - j)) for j in range(3)] for i in range(3)])
    err_direct = float(np.max(np.abs(G.build_joint_adjacency(conf, mats.hops).a - direct)))

    topo = SkeletonTopology.default()
    hops = G.SkeletonMatrices.from_topology(topo).hops
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        sums = G.normalize_in_degree(G.build_joint_adjacency(rng.uniform(0, 1, topo.joint_count), hops)).a.sum(axis=0)
        worst = max(worst, float(np.max(np.abs(sums[sums != 0] - 1.0))))
    record(2, err_direct <= 1e-12 and worst <= 1e-9, f"direct error {err_direct:.1e}, worst column-sum error {worst:.1e}")


# 3. layer oracle


def test_criterion_03_sage_oracle():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 6))
        d_in, d_out = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        a = G.normalize_columns(rng.uniform(0, 1, (n, n)))
        h = rng.normal(size=(n, d_in))
        w = rng.normal(size=(2 * d_in, d_out))
        z = np.concatenate([a @ h, h], axis=1) @ w
        expected = np.where(z > 0, z, 0.1 * z)
        got = G.sage_layer(Tensor(h), G.DirectedAdjacency(a, True), Tensor(w), "leaky_relu", 0.1).data
        worst = max(worst, float(np.max(np.abs(got - expected))))
    record(3, worst <= 1e-12, f"max deviation {worst:.1e} over 100 instances")


# 4. geometry


def test_criterion_04_geometry():
    cam = CameraModel(960.0, 540.0, 1000.0)
    rng = np.random.default_rng(2)
    px = rng.uniform(-2000, 4000, (100_000, 2))
    d = rng.uniform(0.1, 20, 100_000)
    err = float(np.max(np.abs(project(back_project(px, d, cam.center, cam.focal), cam) - px)))
    on_axis = back_project(np.column_stack([np.full(1000, 960.0), rng.uniform(0, 1080, 1000)]), rng.uniform(0.5, 8, 1000), cam.center)
    exact = bool(np.all(on_axis[:, 0] == 0.0))
    record(4, err <= 1e-9 and exact, f"round-trip error {err:.1e}, X == 0 on the axis: {exact}")


# 5. soft-argmax


def test_criterion_05_soft_argmax():
    bins = K.DepthBins(60, 0.0, 6.0)
    uniform = abs(K.soft_argmax_depth(np.zeros(60), bins) - 3.0)
    sat = 0.0
    for k in range(60):
        logits = np.zeros(60)
        logits[k] = 60.0
        sat = max(sat, abs(K.soft_argmax_depth(logits, bins) - bins.centers[k]))
    rng = np.random.default_rng(3)
    inside = all(
        bins.centers[0] - 1e-12 <= K.soft_argmax_depth(rng.normal(size=60) * s, bins) <= bins.centers[-1] + 1e-12
        for s in rng.uniform(0, 1000, 1000)
    )
    record(5, uniform <= 1e-12 and sat <= 1e-6 and inside,
           f"uniform error {uniform:.1e}, saturation error {sat:.1e}, always in range: {inside}")


# 6. fusion


def test_criterion_06_fusion():
    iv = OcclusionInterval(10, 30)
    ends = fusion_weight(10, iv) == 1.0 and fusion_weight(30, iv) == 1.0
    three = abs(fusion_weight(13, iv) - np.exp(-3))
    rng = np.random.default_rng(4)
    between = 0
    for _ in range(10_000):
        pd, ps = rng.normal(size=3) * 1000, rng.normal(size=3) * 1000
        p = fuse_root(pd, ps, rng.uniform())
        between += bool(np.all(p >= np.minimum(pd, ps)) and np.all(p <= np.maximum(pd, ps)))
    record(6, ends and three <= 1e-12 and between == 10_000,
           f"w=1 at both ends: {ends}, e^-3 error {three:.1e}, between {between}/10000")


# 7. occlusion thresholds


def test_criterion_07_thresholds():
    def flags(visible):
        return np.arange(17) >= visible

    checks = [
        joint_occluded(0.49) is True,
        joint_occluded(0.50) is False,
        pose_occluded(flags(5)) is True,
        pose_occluded(flags(6)) is False,
    ]
    record(7, all(checks), f"{sum(checks)}/4 threshold checks")


# 8. Procrustes


def test_criterion_08_procrustes():
    rng = np.random.default_rng(5)
    worst, ordered = 0.0, True
    for _ in range(1000):
        g = rng.normal(size=(17, 3)) * 200
        rot = Rotation.random(random_state=int(rng.integers(2**31))).as_matrix()
        copy = rng.uniform(0.2, 5.0) * g @ rot.T + rng.normal(size=3) * 1000
        worst = max(worst, M.pa_mpjpe(copy, g))
        p = g + rng.normal(size=(17, 3)) * rng.uniform(1, 300)
        ordered &= M.pa_mpjpe(p, g) <= M.mpjpe(p, g) + 1e-9
    record(8, worst < 1e-6 and ordered, f"worst pa_mpjpe on similar copies {worst:.1e}, pa <= mpjpe: {ordered}")


# 9 and 10. synthetic training and occlusion robustness


@pytest.fixture(scope="module")
def trained():
    t0 = time.perf_counter()
    corpus = [sf for _, sf in generate_corpus(200, (2, 3), 64, "crossing", seed=0)]
    train, val, test = S.split(corpus, seed=0)
    trs, vas, tes = (TR.TrackSet.from_files(x) for x in (train, val, test))
    gcn_cfg = TR.OptimizerConfig(epochs=10, batch_size=64)
    tcn_cfg = TR.OptimizerConfig(epochs=10, batch_size=64)
    configs = {"gcn": gcn_cfg, "joint": tcn_cfg, "velocity": tcn_cfg, "root": tcn_cfg, "passthrough": gcn_cfg}
    result = TR.train_staged(trs, vas, configs, stride=4, baseline=True)
    models = {k: Model(*v) for k, v in result.models.items()}
    bundle = ModelBundle(models["gcn"], models["joint"], models["root"], models["velocity"], models["passthrough"])
    return {"bundle": bundle, "test_files": test, "test": tes, "train_seconds": result.seconds,
            "total_seconds": time.perf_counter() - t0}


@pytest.mark.slow
def test_criterion_09_synthetic_training(trained):
    bundle, tes = trained["bundle"], trained["test"]
    topo = tes.topology
    mats = G.SkeletonMatrices.from_topology(topo)

    # (a) GCN pose error on held-out frames, trained versus its initialization
    samples = TR.gcn_samples(tes, 1)
    inputs = G.prepare_inputs(samples.joints2d, samples.conf, samples.paf, mats)
    gt = samples.target * bundle.gcn.hyper["output_scale"]
    init, init_hp = G.init_gcn(topo, seed=0)
    e_init = M.mpjpe(G.gcn_predict(init, init_hp, inputs, topo.root_index), gt)
    e_trained = M.mpjpe(G.gcn_predict(bundle.gcn.params, bundle.gcn.hyper, inputs, topo.root_index), gt)
    gain = 1.0 - e_trained / e_init

    # (b) root-TCN Z/f error
    x, y = TR.root_samples(tes, bundle.root.hyper)
    bins = bundle.bins
    z = K.soft_argmax_depth(K.root_tcn_logits(bundle.root.params, bundle.root.hyper, x), bins)
    median = float(np.median(np.abs(z - y)))

    # (c) PCK_abs on occluded frames, full pipeline against the depth-path-only passthrough baseline
    def pck_abs_occluded(config):
        hits = []
        for f in trained["test_files"]:
            tracks = f.tracks()
            for tr, res in zip(tracks, infer(tracks, bundle, f.camera, f.topology, config).tracks):
                err = np.linalg.norm(res.pose_cam - tr.gt3d, axis=-1)
                hits.append((err[tr.occluded] <= M.ABS_MM).ravel())
        return 100.0 * float(np.mean(np.concatenate(hits)))

    full = pck_abs_occluded(PipelineConfig())
    base = pck_abs_occluded(PipelineConfig(lifter="passthrough", use_joint_tcn=False, use_velocity=False))

    seconds = trained["total_seconds"]
    checks = {"a": gain >= 0.60, "b": median < 2 * bins.width, "c": full >= base + 10.0, "time": seconds < 900}
    record(9, all(checks.values()),
           f"(a) MPJPE {e_init:.0f} -> {e_trained:.0f} mm, gain {100 * gain:.1f}%; "
           f"(b) median |Z/f error| {median:.4f} vs limit {2 * bins.width:.3f}; "
           f"(c) occluded PCK_abs {full:.1f} vs baseline {base:.1f}; {seconds:.0f}s total")


@pytest.mark.slow
def test_criterion_10_occlusion_robustness(trained):
    bundle = trained["bundle"]
    topo = SkeletonTopology.default()
    full = PipelineConfig()
    passthrough = PipelineConfig(lifter="passthrough", use_joint_tcn=False)

    def mpjpe(tracks, cam, config):
        out = infer(tracks, bundle, cam, topo, config)
        return float(np.mean([
            np.linalg.norm(r.pose_rel - (t.gt3d - t.gt3d[:, :1]), axis=-1).mean() for t, r in zip(tracks, out.tracks)
        ]))

    d_full, d_pass = [], []
    for seed in range(20):
        cfg = S.SceneConfig(person_count=2, occlusion="none", rng_seed=10_000 + seed)
        f = scene_to_file(S.render(S.generate(cfg, topo), cfg, topo), topo)
        tracks = f.tracks()
        rng = np.random.default_rng([seed, 7])
        masked = []
        for tr in tracks:
            j, c, p = S.mask_joints(tr.joints2d, tr.conf, 0.3, rng, cfg.occlusion_noise_gain, topo)
            masked.append(TrackedSequence(tr.person_id, tr.t, j, c, p, tr.occluded, tr.gt3d))
        d_full.append(mpjpe(masked, f.camera, full) - mpjpe(tracks, f.camera, full))
        d_pass.append(mpjpe(masked, f.camera, passthrough) - mpjpe(tracks, f.camera, passthrough))
    a, b = float(np.mean(d_full)), float(np.mean(d_pass))
    record(10, a < b, f"mean MPJPE degradation with 30% masked: full {a:.1f} mm vs passthrough {b:.1f} mm")


# 11. determinism and formats


def test_criterion_11_determinism(tmp_path, capsys):
    def run_all(root):
        data = root / "data"
        assert main(["gen", "--scenes", "3", "--frames", "24", "--persons", "2-3", "--occlusion", "crossing",
                     "--seed", "11", "--out", str(data)]) == 0
        ck = {}
        for model, extra in (("gcn", []), ("tcn-joint", ["--gcn", str(root / "gcn.json")]), ("tcn-root", []),
                             ("tcn-velocity", []), ("passthrough", [])):
            ck[model] = root / f"{model}.json"
            assert main(["train", "--model", model, "--data", str(data), "--epochs", "1", "--batch-size", "64",
                         "--stride", "4", "--out", str(ck[model]), *extra]) == 0
        infer_common = ["--gcn", str(ck["gcn"]), "--tcn-joint", str(ck["tcn-joint"]), "--tcn-root",
                        str(ck["tcn-root"]), "--tcn-velocity", str(ck["tcn-velocity"])]
        assert main(["infer", "--data", str(data), *infer_common, "--out", str(root / "pred")]) == 0
        assert main(["eval", "--pred", str(root / "pred"), "--gt", str(data), "--out", str(root / "report.json")]) == 0
        assert main(["gradcheck", "--model", "tcn-root", "--out", str(root / "gc.json")]) == 0
        files = {}
        for p in sorted(root.rglob("*")):
            # manifests carry wall-clock times and paths; the history CSV carries epoch seconds
            if p.is_file() and "manifest" not in p.name and not p.name.endswith(".history.csv"):
                files[str(p.relative_to(root))] = p.read_bytes()
        for p in sorted(root.glob("*.history.csv")):
            files[p.name] = "\n".join(",".join(r.split(",")[:3]) for r in p.read_text().splitlines()).encode()
        return files

    a = run_all(tmp_path / "a")
    b = run_all(tmp_path / "b")
    capsys.readouterr()
    same = a == b
    differing = sorted(k for k in a if a.get(k) != b.get(k))

    # lossless round trips
    sf = read_sequence(tmp_path / "a" / "data" / "scene_0000.jsonl")
    jsonl_ok = loads_sequence(sf.dumps()).frames == sf.frames and sf.dumps() == (tmp_path / "a" / "data" / "scene_0000.jsonl").read_text()
    ck = load_checkpoint(tmp_path / "a" / "gcn.json", "gcn")
    save_checkpoint(tmp_path / "copy.json", "gcn", ck.params, ck.hyper, ck.optimizer)
    ck_ok = (tmp_path / "copy.json").read_bytes() == (tmp_path / "a" / "gcn.json").read_bytes()
    record(11, same and jsonl_ok and ck_ok,
           f"{len(a)} outputs byte-identical across runs: {same}{' ' + str(differing) if differing else ''}; "
           f"JSONL round trip: {jsonl_ok}; checkpoint round trip: {ck_ok}")
