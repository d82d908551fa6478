"""Optimizers, staged training loops for the four networks, and gradient checks."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import diffcore as dc
from . import gcn as G
from . import tcn as K
from .camera import project
from .diffcore import GradReport, ParamStore, Tensor
from .errors import TrainingError, ValidationError
from .fusion import TrackedSequence
from .skeleton import SkeletonTopology

MODEL_NAMES = {"gcn": "gcn", "joint": "tcn_joint", "velocity": "tcn_velocity", "root": "tcn_root", "passthrough": "passthrough"}
GRADCHECK_THRESHOLDS = {"gcn": 1e-4, "joint": 1e-4, "velocity": 1e-4, "root": 1e-6}


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    clip_norm: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("sgd", "adam"):
            raise ValidationError(f"optimizer must be sgd or adam, got {self.kind!r}")
        if not self.learning_rate >= 0:
            raise ValidationError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ValidationError("batch size must be at least 1")
        if self.epochs < 0:
            raise ValidationError("epochs must be non-negative")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
        for i, row in enumerate(zip(self.train_loss, self.val_loss, self.seconds), start=1):
            w.writerow([i, repr(row[0]), repr(row[1]), f"{row[2]:.3f}"])
        return buf.getvalue()


@dataclass
class OptimizerState:
    t: int = 0
    m: ParamStore = field(default_factory=ParamStore)
    v: ParamStore = field(default_factory=ParamStore)

    def to_dict(self) -> dict[str, Any]:
        return {"t": self.t, "m": dc.encode_store(self.m), "v": dc.encode_store(self.v)}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> OptimizerState:
        return cls(int(doc["t"]), dc.decode_store(doc["m"]), dc.decode_store(doc["v"]))


def step(params: ParamStore, grads: ParamStore, state: OptimizerState, config: OptimizerConfig) -> tuple[ParamStore, OptimizerState]:
    """One SGD or Adam update; returns new parameter and state objects."""
    if list(params) != list(grads):
        raise ValidationError(f"gradient keys {list(grads)} do not match parameters {list(params)}")
    if config.clip_norm is not None:
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if norm > config.clip_norm:
            grads = ParamStore((k, g * (config.clip_norm / norm)) for k, g in grads.items())
    lr = config.learning_rate
    new = ParamStore()
    if config.kind == "sgd":
        for k, p in params.items():
            new[k] = p - lr * grads[k]
        return new, OptimizerState(state.t + 1, state.m, state.v)
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    m, v = ParamStore(), ParamStore()
    for k, p in params.items():
        g = grads[k]
        m[k] = b1 * state.m[k] + (1 - b1) * g if k in state.m else (1 - b1) * g
        v[k] = b2 * state.v[k] + (1 - b2) * g * g if k in state.v else (1 - b2) * g * g
        m_hat = m[k] / (1 - b1**t)
        v_hat = v[k] / (1 - b2**t)
        new[k] = p - lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return new, OptimizerState(t, m, v)


Objective = Callable[[Mapping[str, Tensor]], Tensor]


def fit(
    params: ParamStore,
    config: OptimizerConfig,
    epoch_batches: Callable[[int, np.random.Generator], Iterable[tuple[Objective, int]]],
    val_loss: Callable[[ParamStore], float],
    state: OptimizerState | None = None,
    start_epoch: int = 0,
    log: Callable[[str], None] | None = None,
) -> tuple[ParamStore, TrainHistory, OptimizerState]:
    """Generic minibatch loop.

    ``epoch_batches(epoch, rng)`` yields (objective, batch_size) pairs; the
    rng is derived from (seed, epoch) so a resumed run replays identically.
    """
    state = state or OptimizerState()
    history = TrainHistory()
    for epoch in range(start_epoch, config.epochs):
        t0 = time.perf_counter()
        rng = np.random.default_rng([config.seed, epoch])
        total, count = 0.0, 0
        for objective, size in epoch_batches(epoch, rng):
            loss, grads = dc.value_and_grad(objective, params)
            if not np.isfinite(loss):
                raise TrainingError(f"loss became {loss} in epoch {epoch + 1}", epoch=epoch + 1)
            params, state = step(params, grads, state, config)
            total += loss * size
            count += size
        vl = val_loss(params)
        if not np.isfinite(vl):
            raise TrainingError(f"validation loss became {vl} in epoch {epoch + 1}", epoch=epoch + 1)
        history.train_loss.append(total / max(count, 1))
        history.val_loss.append(vl)
        history.seconds.append(time.perf_counter() - t0)
        if log is not None:
            log(f"epoch {epoch + 1}/{config.epochs} train {history.train_loss[-1]:.6g} val {vl:.6g}")
    return params, history, state


def _minibatches(n: int, batch: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    perm = rng.permutation(n)
    for s in range(0, n, batch):
        yield np.sort(perm[s : s + batch])


# datasets


@dataclass
class TrackSet:
    """Tracks from one or more scenes, each paired with its camera."""

    tracks: list[TrackedSequence]
    centers: list[np.ndarray]
    focals: list[float]
    topology: SkeletonTopology

    @classmethod
    def from_files(cls, files: Sequence[Any]) -> TrackSet:
        tracks, centers, focals = [], [], []
        topo = None
        for sf in files:
            topo = topo or sf.topology
            if sf.topology != topo:
                raise ValidationError("all sequences in a dataset must share one topology")
            for tr in sf.tracks():
                if tr.gt3d is None:
                    raise ValidationError(f"track {tr.person_id} lacks ground truth; cannot train on it")
                if sf.camera.focal is None:
                    raise ValidationError("training data needs a known focal length")
                tracks.append(tr)
                centers.append(sf.camera.center)
                focals.append(sf.camera.focal)
        if topo is None:
            raise ValidationError("dataset is empty")
        return cls(tracks, centers, focals, topo)

    def __len__(self) -> int:
        return len(self.tracks)

    def root_states(self, i: int) -> np.ndarray:
        """(T, 3) ground-truth (X, Y, Z/f) root trajectory of track ``i``."""
        root = self.tracks[i].gt3d[:, self.topology.root_index]
        return np.stack([root[:, 0], root[:, 1], root[:, 2] / self.focals[i]], axis=-1)

    def gt_relative(self, i: int) -> np.ndarray:
        g = self.tracks[i].gt3d
        r = self.topology.root_index
        return g - g[:, r : r + 1]

    def gt_projection(self, i: int) -> np.ndarray:
        from .camera import CameraModel

        c = self.centers[i]
        return project(self.tracks[i].gt3d, CameraModel(float(c[0]), float(c[1]), self.focals[i]))


@dataclass
class GcnSamples:
    joints2d: np.ndarray
    conf: np.ndarray
    paf: np.ndarray
    gt2d: np.ndarray
    target: np.ndarray  # person-centric, network units

    def __len__(self) -> int:
        return len(self.target)


def gcn_samples(data: TrackSet, stride: int = 1, output_scale: float = 1000.0) -> GcnSamples:
    parts: dict[str, list[np.ndarray]] = {k: [] for k in ("j", "c", "p", "g", "t")}
    for i, tr in enumerate(data.tracks):
        sl = slice(None, None, stride)
        parts["j"].append(tr.joints2d[sl])
        parts["c"].append(tr.conf[sl])
        parts["p"].append(tr.paf_conf[sl])
        parts["g"].append(data.gt_projection(i)[sl])
        parts["t"].append(data.gt_relative(i)[sl] / output_scale)
    cat = {k: np.concatenate(v) for k, v in parts.items()}
    return GcnSamples(cat["j"], cat["c"], cat["p"], cat["g"], cat["t"])


def train_gcn(
    train: TrackSet,
    val: TrackSet | None,
    config: OptimizerConfig,
    hyper: Mapping[str, Any] | None = None,
    stride: int = 1,
    params: ParamStore | None = None,
    log: Callable[[str], None] | None = None,
    state: OptimizerState | None = None,
    start_epoch: int = 0,
) -> tuple[ParamStore, dict[str, Any], TrainHistory, OptimizerState]:
    """Fit the GCN on detector-like observations plus freshly corrupted ground truth each epoch."""
    topo = train.topology
    init, hp = G.init_gcn(topo, hyper, seed=config.seed)
    params = params if params is not None else init
    mats = G.SkeletonMatrices.from_topology(topo)
    root = topo.root_index
    bones = np.asarray(topo.bones, dtype=np.int64).reshape(-1, 2)
    samples = gcn_samples(train, stride, hp["output_scale"])
    if len(samples) == 0:
        raise ValidationError("no GCN training samples")
    observed = G.prepare_inputs(samples.joints2d, samples.conf, samples.paf, mats)
    val_samples = gcn_samples(val, stride, hp["output_scale"]) if val is not None and len(val) else samples
    val_inputs = G.prepare_inputs(val_samples.joints2d, val_samples.conf, val_samples.paf, mats)

    def epoch_batches(epoch: int, rng: np.random.Generator):
        aug_j, aug_c, aug_p = G.augment_batch(samples.gt2d, rng, hp["noise_gain"], root, bones)
        augmented = G.prepare_inputs(aug_j, aug_c, aug_p, mats)
        n = len(samples)
        for idx in _minibatches(2 * n, config.batch_size, rng):
            obs_idx, aug_idx = idx[idx < n], idx[idx >= n] - n
            inputs = G.GcnInputs(
                *(np.concatenate([a, b]) for a, b in zip(
                    (observed.joint_feats[obs_idx], observed.bone_feats[obs_idx], observed.joint_adj[obs_idx], observed.bone_adj[obs_idx]),
                    (augmented.joint_feats[aug_idx], augmented.bone_feats[aug_idx], augmented.joint_adj[aug_idx], augmented.bone_adj[aug_idx]),
                ))
            )
            target = np.concatenate([samples.target[obs_idx], samples.target[aug_idx]])

            def objective(p, inputs=inputs, target=target):
                return G.batch_loss(G.gcn_network(p, inputs, hp, root), target)

            yield objective, len(idx)

    def val_loss(p: ParamStore) -> float:
        pred = G.gcn_predict(p, hp, val_inputs, root) / hp["output_scale"]
        return float(np.mean(np.sum((pred - val_samples.target) ** 2, axis=(1, 2))))

    params, history, state = fit(params, config, epoch_batches, val_loss, state, start_epoch, log)
    return params, hp, history, state


def init_passthrough(topology: SkeletonTopology, width: int = 256, seed: int = 0) -> tuple[ParamStore, dict[str, Any]]:
    """Plain MLP lifter over raw normalised coordinates, ignoring confidences (the no-GCN baseline)."""
    rng = np.random.default_rng(seed)
    n = topology.joint_count
    hp = {"kind": "passthrough", "joint_count": n, "width": width, "activation": "leaky_relu", "slope": 0.1, "output_scale": 1000.0}
    params = ParamStore()
    params["l0.w"] = G._glorot(rng, 2 * n, width)
    params["l0.b"] = np.zeros(width)
    params["l1.w"] = G._glorot(rng, width, width)
    params["l1.b"] = np.zeros(width)
    params["l2.w"] = G._glorot(rng, width, 3 * n)
    params["l2.b"] = np.zeros(3 * n)
    return params, hp


def passthrough_network(params: Mapping[str, Tensor], inputs: G.GcnInputs, hyper: Mapping[str, Any], root: int) -> Tensor:
    b = len(inputs)
    n = hyper["joint_count"]
    x = Tensor(inputs.joint_feats[..., :2].reshape(b, -1))
    for i in range(2):
        x = dc.activation(dc.matmul(x, params[f"l{i}.w"]) + params[f"l{i}.b"], hyper["activation"], hyper["slope"])
    z = dc.matmul(x, params["l2.w"]) + params["l2.b"]
    return dc.matmul(Tensor(G._centering_matrix(n, root)), dc.reshape(z, (b, n, 3)))


def passthrough_predict(params: ParamStore, hyper: Mapping[str, Any], inputs: G.GcnInputs, root: int, batch: int = 512) -> np.ndarray:
    consts = params.constants()
    out = [passthrough_network(consts, inputs.subset(np.arange(s, min(s + batch, len(inputs)))), hyper, root).data
           for s in range(0, len(inputs), batch)]
    return np.concatenate(out) * hyper["output_scale"] if out else np.zeros((0, hyper["joint_count"], 3))


def train_passthrough(
    train: TrackSet,
    val: TrackSet | None,
    config: OptimizerConfig,
    stride: int = 1,
    log: Callable[[str], None] | None = None,
    params: ParamStore | None = None,
    state: OptimizerState | None = None,
    start_epoch: int = 0,
) -> tuple[ParamStore, dict[str, Any], TrainHistory, OptimizerState]:
    topo = train.topology
    init, hp = init_passthrough(topo, seed=config.seed)
    params = params if params is not None else init
    mats = G.SkeletonMatrices.from_topology(topo)
    root = topo.root_index
    samples = gcn_samples(train, stride)
    inputs = G.prepare_inputs(samples.joints2d, samples.conf, samples.paf, mats)
    vs = gcn_samples(val, stride) if val is not None and len(val) else samples
    vin = G.prepare_inputs(vs.joints2d, vs.conf, vs.paf, mats)

    def epoch_batches(epoch, rng):
        for idx in _minibatches(len(samples), config.batch_size, rng):
            sub, target = inputs.subset(idx), samples.target[idx]

            def objective(p, sub=sub, target=target):
                return G.batch_loss(passthrough_network(p, sub, hp, root), target)

            yield objective, len(idx)

    def val_loss(p):
        pred = passthrough_predict(p, hp, vin, root) / hp["output_scale"]
        return float(np.mean(np.sum((pred - vs.target) ** 2, axis=(1, 2))))

    params, history, state = fit(params, config, epoch_batches, val_loss, state, start_epoch, log)
    return params, hp, history, state


# temporal networks


def gcn_track_outputs(data: TrackSet, gcn_params: ParamStore, gcn_hyper: Mapping[str, Any]) -> list[np.ndarray]:
    """Frozen-GCN person-centric poses (mm) for every frame of every track."""
    mats = G.SkeletonMatrices.from_topology(data.topology)
    out = []
    for tr in data.tracks:
        inputs = G.prepare_inputs(tr.joints2d, tr.conf, tr.paf_conf, mats)
        out.append(G.gcn_predict(gcn_params, gcn_hyper, inputs, data.topology.root_index))
    return out


def joint_samples(data: TrackSet, gcn_out: list[np.ndarray], hyper: Mapping[str, Any]) -> tuple[np.ndarray, np.ndarray]:
    half = hyper["window"] // 2
    xs, ys = [], []
    for i, poses in enumerate(gcn_out):
        xs.append(K.joint_features(K.centered_windows(poses, half), hyper))
        ys.append(data.gt_relative(i) / hyper["output_scale"])
    return np.concatenate(xs), np.concatenate(ys)


def velocity_samples(
    data: TrackSet, hyper: Mapping[str, Any], rng: np.random.Generator | None = None, noise: Sequence[float] = (0.0, 0.0, 0.0)
) -> tuple[np.ndarray, np.ndarray]:
    """Causal windows of (optionally jittered) root history and next-frame velocity targets."""
    n = hyper["window"]
    xs, ys = [], []
    noise = np.asarray(noise, dtype=np.float64)
    for i in range(len(data)):
        r = data.root_states(i)
        if len(r) < 2:
            continue
        hist = K.causal_windows(r, n + 1)[1:]  # frames t-n-1 .. t-1 for t >= 1
        if rng is not None and np.any(noise > 0):
            level = rng.uniform(0.0, 1.0, size=(len(hist), 1, 1))
            hist = hist + rng.standard_normal(hist.shape) * noise * level
        pos = hist[:, 1:]
        vel = np.diff(hist, axis=1)
        xs.append(K.velocity_features(pos, vel))
        ys.append((r[1:] - r[:-1]) / K.ROOT_UNITS)
    return np.concatenate(xs), np.concatenate(ys)


def root_samples(data: TrackSet, hyper: Mapping[str, Any]) -> tuple[np.ndarray, np.ndarray]:
    half = hyper["window"] // 2
    root = data.topology.root_index
    xs, ys = [], []
    for i, tr in enumerate(data.tracks):
        feats = K.root_features(tr.joints2d, data.centers[i], hyper, root)
        win = K.centered_windows(feats, half)
        target = data.root_states(i)[:, 2]
        ok = np.all(np.isfinite(win), axis=(1, 2))
        xs.append(win[ok])
        ys.append(target[ok])
    return np.concatenate(xs), np.concatenate(ys)


VELOCITY_NOISE = (100.0, 100.0, 0.3)  # comparable to depth-path jitter next to occlusions


def train_tcn(
    kind: str,
    train: TrackSet,
    val: TrackSet | None,
    config: OptimizerConfig,
    hyper: Mapping[str, Any] | None = None,
    gcn: tuple[ParamStore, Mapping[str, Any]] | None = None,
    log: Callable[[str], None] | None = None,
    params: ParamStore | None = None,
    state: OptimizerState | None = None,
    start_epoch: int = 0,
) -> tuple[ParamStore, dict[str, Any], TrainHistory, OptimizerState]:
    """Train one temporal network.

    Targets: person-centric central-frame poses (joint), next-frame root
    velocity in (X, Y, Z/f) units (velocity) or ground-truth Z/f (root).
    The joint-TCN consumes frozen GCN outputs, so ``gcn`` is required for it.
    """
    topo = train.topology
    init, hp = K.init_tcn(kind, hyper, seed=config.seed, joint_count=topo.joint_count)
    params = params if params is not None else init
    root = topo.root_index
    val = val if val is not None and len(val) else train

    if kind == "joint":
        if gcn is None:
            raise ValidationError("joint-TCN training needs a trained GCN")
        x, y = joint_samples(train, gcn_track_outputs(train, *gcn), hp)
        vx, vy = joint_samples(val, gcn_track_outputs(val, *gcn), hp)

        def objective_for(xb, yb):
            return lambda p: G.batch_loss(K.joint_network(p, xb, hp, root), yb)

        def predict(p, xv):
            return K.joint_tcn_predict(p, hp, xv.reshape(*xv.shape[:2], -1, 3) * hp["output_scale"], root) / hp["output_scale"]

        def val_loss(p):
            return float(np.mean(np.sum((predict(p, vx) - vy) ** 2, axis=(1, 2))))

        def epoch_data(rng):
            return x, y
    elif kind == "velocity":
        vx, vy = velocity_samples(val, hp)

        def objective_for(xb, yb):
            return lambda p: G.batch_loss(K.tcn_network(p, xb, hp), yb)

        def val_loss(p):
            pred = K._predict(p, vx, hp)
            return float(np.mean(np.sum((pred - vy) ** 2, axis=1)))

        def epoch_data(rng):
            return velocity_samples(train, hp, rng, VELOCITY_NOISE)
    elif kind == "root":
        bins = K.DepthBins.from_dict(hp["bins"])
        x, y = root_samples(train, hp)
        vx, vy = root_samples(val, hp)

        def objective_for(xb, yb):
            return lambda p: K.batch_root_loss(K.soft_argmax_tensor(K.tcn_network(p, xb, hp), bins), yb)

        def val_loss(p):
            pred = K.soft_argmax_depth(K._predict(p, vx, hp), bins)
            return float(np.mean((pred - vy) ** 2))

        def epoch_data(rng):
            return x, y
    else:
        raise ValidationError(f"unknown TCN kind {kind!r}")

    def epoch_batches(epoch, rng):
        xe, ye = epoch_data(rng)
        for idx in _minibatches(len(xe), config.batch_size, rng):
            yield objective_for(xe[idx], ye[idx]), len(idx)

    params, history, state = fit(params, config, epoch_batches, val_loss, state, start_epoch, log)
    return params, hp, history, state


@dataclass
class StagedResult:
    models: dict[str, tuple[ParamStore, dict[str, Any]]]
    histories: dict[str, TrainHistory]
    seconds: float


def train_staged(
    train: TrackSet,
    val: TrackSet | None,
    configs: Mapping[str, OptimizerConfig],
    stride: int = 1,
    baseline: bool = False,
    log: Callable[[str], None] | None = None,
) -> StagedResult:
    """GCN first, then the three TCNs (the joint-TCN on frozen GCN outputs).

    ``configs`` maps gcn / joint / velocity / root (and passthrough when
    ``baseline``) to optimizer settings. Staged training is our reading of an
    unspecified schedule.
    """
    t0 = time.perf_counter()
    models: dict[str, tuple[ParamStore, dict[str, Any]]] = {}
    histories: dict[str, TrainHistory] = {}

    def tag(name: str) -> Callable[[str], None] | None:
        return None if log is None else (lambda m: log(f"[{name}] {m}"))

    p, hp, h, _ = train_gcn(train, val, configs["gcn"], stride=stride, log=tag("gcn"))
    models["gcn"], histories["gcn"] = (p, hp), h
    for kind in ("joint", "velocity", "root"):
        p, hp, h, _ = train_tcn(kind, train, val, configs[kind], gcn=models["gcn"], log=tag(kind))
        models[kind], histories[kind] = (p, hp), h
    if baseline:
        p, hp, h, _ = train_passthrough(train, val, configs.get("passthrough", configs["gcn"]), stride=stride, log=tag("passthrough"))
        models["passthrough"], histories["passthrough"] = (p, hp), h
    return StagedResult(models, histories, time.perf_counter() - t0)


# gradient checks


def gradcheck_instance(kind: str, seed: int) -> tuple[Callable[[Mapping[str, Tensor]], Tensor], ParamStore]:
    """A small random model plus batch, wired to the model's training loss."""
    rng = np.random.default_rng([seed, 99])
    topo = SkeletonTopology.default()
    n, root = topo.joint_count, topo.root_index
    if kind == "gcn":
        params, hp = G.init_gcn(topo, {"joint_widths": [4, 4], "bone_widths": [4, 4], "head_width": 8}, seed=seed)
        for k in params:
            if k.endswith(".b"):
                params[k] = rng.normal(0, 0.1, params[k].shape)
        mats = G.SkeletonMatrices.from_topology(topo)
        joints = rng.normal(0, 100, (2, n, 2)) + 500
        conf = rng.uniform(0, 1, (2, n))
        paf = rng.uniform(0, 1, (2, topo.bone_count))
        inputs = G.prepare_inputs(joints, conf, paf, mats)
        target = rng.normal(0, 0.3, (2, n, 3))
        return (lambda p: G.batch_loss(G.gcn_network(p, inputs, hp, root), target)), params
    small = {"widths": [4, 4, 4]}
    params, hp = K.init_tcn(kind, small, seed=seed, joint_count=n)
    params["head.b"] = rng.normal(0, 0.1, params["head.b"].shape)
    T = hp["window"]
    if kind == "joint":
        x = rng.normal(0, 0.3, (2, T, 3 * n))
        target = rng.normal(0, 0.3, (2, n, 3))
        return (lambda p: G.batch_loss(K.joint_network(p, x, hp, root), target)), params
    if kind == "velocity":
        x = rng.normal(0, 1, (2, T, 6))
        target = rng.normal(0, 1, (2, 3))
        return (lambda p: G.batch_loss(K.tcn_network(p, x, hp), target)), params
    if kind == "root":
        bins = K.DepthBins.from_dict(hp["bins"])
        x = rng.normal(0, 1, (2, T, hp["in_features"]))
        target = rng.uniform(bins.lo, bins.hi, 2)
        return (lambda p: K.batch_root_loss(K.soft_argmax_tensor(K.tcn_network(p, x, hp), bins), target)), params
    raise ValidationError(f"unknown model kind {kind!r}")


def run_grad_check(kind: str, seed: int = 0, epsilon: float = 1e-5, corrupt: bool = False) -> GradReport:
    """Finite-difference check of a random mini-instance of ``kind``.

    ``corrupt`` perturbs one analytic gradient entry (a negative control).
    """
    objective, params = gradcheck_instance(kind, seed)
    analytic = None
    if corrupt:
        _, analytic = dc.value_and_grad(objective, params)
        name = next(iter(analytic))
        analytic[name].reshape(-1)[0] += 1.0 + abs(analytic[name].reshape(-1)[0])
    return dc.grad_check(objective, params, epsilon, analytic=analytic)


def history_dict(h: TrainHistory) -> dict[str, Any]:
    return asdict(h)
