"""Command-line entry points: gen, train, infer, eval, gradcheck.

Exit codes: 0 success, 1 verification failure, 2 input or configuration error.
Every command that writes files also writes one run manifest next to them.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import jsonschema
import numpy as np

from . import __version__
from . import metrics as M
from . import train as TR
from .diffcore import atomic_write_text, load_checkpoint, save_checkpoint
from .errors import SkeliftError, TrainingError
from .formats import PREDICTION, SequenceFile, generate_corpus, parse_person_range, read_sequence
from .pipeline import ModelBundle, PipelineConfig, infer, output_frames
from .synthgen import OCCLUSIONS, split

EXIT_OK, EXIT_VERIFY, EXIT_INPUT = 0, 1, 2
MODEL_FLAGS = {"gcn": "gcn", "tcn-joint": "joint", "tcn-velocity": "velocity", "tcn-root": "root", "passthrough": "passthrough"}


class UsageError(SkeliftError):
    pass


@dataclass
class RunManifest:
    command: str
    config: dict[str, Any]
    seed: int | None
    inputs: list[str]
    outputs: list[str]
    version: str = __version__
    wall_clock: dict[str, Any] = field(default_factory=dict)

    def write(self, path: str | Path) -> None:
        atomic_write_text(path, json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _manifest(args: argparse.Namespace, inputs: Sequence[Any], outputs: Sequence[Any], started: float, path: Path) -> None:
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    RunManifest(
        command=args.command,
        config=config,
        seed=getattr(args, "seed", None),
        inputs=[str(p) for p in inputs],
        outputs=[str(p) for p in outputs],
        wall_clock={
            "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
            "seconds": round(time.time() - started, 3),
        },
    ).write(path)


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# dataset loading


def _scene_files(path: Path, part: str | None) -> list[Path]:
    """A single sequence file, or the scenes of a generated directory (optionally one split part)."""
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise UsageError(f"no such file or directory: {path}")
    split_path = path / "split.json"
    if part is not None:
        if not split_path.exists():
            raise UsageError(f"{path} has no split.json, cannot select split {part!r}")
        names = json.loads(split_path.read_text())[part]
        return [path / n for n in names]
    files = sorted(path.glob("*.jsonl"))
    if not files:
        raise UsageError(f"no sequence files in {path}")
    return files


def _read_all(paths: Sequence[Path]) -> list[SequenceFile]:
    out = []
    for p in paths:
        if not p.exists():
            raise UsageError(f"sequence file not found: {p}")
        out.append(read_sequence(p))
    return out


# commands


def cmd_gen(args: argparse.Namespace) -> int:
    started = time.time()
    persons = parse_person_range(args.persons)
    if args.scenes < 1:
        raise UsageError("--scenes must be at least 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = generate_corpus(args.scenes, persons, args.frames, args.occlusion, args.seed, args.focal, args.noise_gain)
    written = []
    for name, sf in corpus:
        sf.write(out / name)
        written.append(out / name)
    names = [name for name, _ in corpus]
    tr, va, te = split(names, (args.train, args.val, 1.0 - args.train - args.val), seed=args.seed)
    atomic_write_text(out / "split.json", json.dumps({"train": tr, "val": va, "test": te}, indent=2) + "\n")
    written.append(out / "split.json")
    _manifest(args, [], written, started, out / "manifest.json")
    _log(f"wrote {len(corpus)} scenes to {out}")
    return EXIT_OK


def _optimizer(args: argparse.Namespace, default_epochs: int) -> TR.OptimizerConfig:
    return TR.OptimizerConfig(
        kind=args.optimizer,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=default_epochs if args.epochs is None else args.epochs,
        seed=args.seed,
        clip_norm=args.clip_norm,
    )


def cmd_train(args: argparse.Namespace) -> int:
    started = time.time()
    kind = MODEL_FLAGS[args.model]
    data = Path(args.data)
    has_split = data.is_dir() and (data / "split.json").exists()
    train_paths = _scene_files(data, "train" if has_split else None)
    val_paths = _scene_files(data, "val") if has_split else []
    train_set = TR.TrackSet.from_files(_read_all(train_paths))
    val_set = TR.TrackSet.from_files(_read_all(val_paths)) if val_paths else None
    config = _optimizer(args, 50 if kind in ("gcn", "passthrough") else 30)

    params = state = None
    start_epoch = 0
    hyper = None
    if args.resume:
        ck = load_checkpoint(args.resume, TR.MODEL_NAMES[kind])
        if ck.optimizer is None:
            raise UsageError(f"{args.resume} carries no optimizer state to resume from")
        params, hyper = ck.params, ck.hyper
        state = TR.OptimizerState.from_dict(ck.optimizer["state"])
        start_epoch = int(ck.optimizer["epoch"])

    gcn = None
    if kind == "joint":
        if not args.gcn:
            raise UsageError("--gcn checkpoint is required to train the joint-TCN")
        ck = load_checkpoint(args.gcn, "gcn")
        gcn = (ck.params, ck.hyper)

    log = _log if args.verbose else None
    try:
        if kind == "gcn":
            params, hp, history, state = TR.train_gcn(
                train_set, val_set, config, hyper, args.stride, params, log, state, start_epoch
            )
        elif kind == "passthrough":
            params, hp, history, state = TR.train_passthrough(
                train_set, val_set, config, args.stride, log, params, state, start_epoch
            )
        else:
            params, hp, history, state = TR.train_tcn(
                kind, train_set, val_set, config, hyper, gcn, log, params, state, start_epoch
            )
    except TrainingError as exc:
        _log(f"training diverged at epoch {exc.epoch}: {exc}")
        return EXIT_INPUT

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    opt = {"epoch": max(config.epochs, start_epoch), "config": asdict(config), "state": state.to_dict()}
    save_checkpoint(out, TR.MODEL_NAMES[kind], params, hp, opt)
    hist_path = _sidecar(out, ".history.csv")
    atomic_write_text(hist_path, history.to_csv())
    inputs = [*train_paths, *val_paths] + ([args.gcn] if args.gcn else []) + ([args.resume] if args.resume else [])
    _manifest(args, inputs, [out, hist_path], started, _sidecar(out, ".manifest.json"))
    _log(f"wrote {out}")
    return EXIT_OK


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    return PipelineConfig(
        lifter=args.lifter,
        use_joint_tcn=not args.no_joint_tcn,
        use_velocity=not args.no_velocity,
        threads=args.threads,
    )


def cmd_infer(args: argparse.Namespace) -> int:
    started = time.time()
    models = ModelBundle.load(args.gcn, args.tcn_joint, args.tcn_root, args.tcn_velocity, args.passthrough)
    config = _pipeline_config(args)
    data = Path(args.data)
    paths = _scene_files(data, args.split)
    out = Path(args.out)
    single = data.is_file()
    if not single:
        out.mkdir(parents=True, exist_ok=True)
    written = []
    for p in paths:
        sf = read_sequence(p)
        result = infer(sf.tracks(), models, sf.camera, sf.topology, config)
        pred = SequenceFile(sf.topology, sf.camera, output_frames(result), PREDICTION, {"source": p.name})
        target = out if single else out / p.name
        target.parent.mkdir(parents=True, exist_ok=True)
        pred.write(target)
        written.append(target)
    ckpts = [args.gcn, args.tcn_joint, args.tcn_root, args.tcn_velocity] + ([args.passthrough] if args.passthrough else [])
    manifest = _sidecar(out, ".manifest.json") if single else out / "manifest.json"
    _manifest(args, [*paths, *ckpts], written, started, manifest)
    _log(f"wrote {len(written)} prediction file(s)")
    return EXIT_OK


def _pair_frames(pred: SequenceFile, gt: SequenceFile, match: str, name: str) -> list[dict[str, Any]]:
    """Aligned (pred, gt) person pairs for every ground-truth frame."""
    pred_by_t = {int(fr["t"]): fr["persons"] for fr in pred.frames}
    rows = []
    for fr in gt.frames:
        t = int(fr["t"])
        if t not in pred_by_t:
            raise UsageError(f"{name}: prediction lacks frame {t}")
        gts = [p for p in fr["persons"] if p.get("gt3d_cam") is not None]
        preds = pred_by_t[t]
        if any(p.get("pose3d_cam") is None for p in preds):
            raise UsageError(f"{name}: frame {t} has predictions without camera-centric joints (unknown focal length)")
        if match == "id":
            by_id = {int(p["id"]): p for p in preds}
            missing = [int(g["id"]) for g in gts if int(g["id"]) not in by_id]
            if missing or len(by_id) != len(preds):
                raise UsageError(f"{name}: frame {t} predictions do not align with ground-truth ids {missing}")
            pairs = [(by_id[int(g["id"])], g) for g in gts]
        else:
            if len(preds) != len(gts):
                raise UsageError(f"{name}: frame {t} has {len(preds)} predictions for {len(gts)} people")
            root = gt.topology.root_index
            pr = np.array([p["pose3d_cam"][root] for p in preds]).reshape(-1, 3)
            gr = np.array([g["gt3d_cam"][root] for g in gts]).reshape(-1, 3)
            pairs = [(preds[i], gts[j]) for i, j in M.greedy_match(pr, gr)]
        for p, g in pairs:
            rows.append({"t": t, "id": int(g["id"]), "occluded": bool(g.get("occluded", False)),
                         "pred": p["pose3d_cam"], "gt": g["gt3d_cam"]})
    return rows


def cmd_eval(args: argparse.Namespace) -> int:
    started = time.time()
    pred_path, gt_path = Path(args.pred), Path(args.gt)
    if pred_path.is_dir():
        pred_files = _scene_files(pred_path, None)
        gt_files = [gt_path / p.name for p in pred_files]
    else:
        pred_files, gt_files = [pred_path], [gt_path]
    rows, seq_rows = [], []
    root = None
    for pp, gp in zip(pred_files, gt_files):
        if not gp.exists():
            raise UsageError(f"ground-truth file not found: {gp}")
        pred, gt = read_sequence(pp), read_sequence(gp)
        if pred.topology != gt.topology:
            raise UsageError(f"{pp.name}: prediction and ground-truth topologies differ")
        root = gt.topology.root_index
        pairs = _pair_frames(pred, gt, args.match, pp.name)
        rows.extend(pairs)
        for pid in sorted({r["id"] for r in pairs}):
            sel = [r for r in pairs if r["id"] == pid]
            m = M.evaluate_poses([r["pred"] for r in sel], [r["gt"] for r in sel], root, args.pck_mm, args.abs_mm)
            seq_rows.append({"sequence": pp.name, "person": pid, **m})
    if not rows:
        raise UsageError("no ground-truth poses to evaluate")
    total = M.evaluate_poses([r["pred"] for r in rows], [r["gt"] for r in rows], root, args.pck_mm, args.abs_mm)
    occ = [r for r in rows if r["occluded"]]
    report = M.EvalReport(per_sequence=seq_rows, **total).to_dict()
    report["occluded"] = M.evaluate_poses([r["pred"] for r in occ], [r["gt"] for r in occ], root, args.pck_mm, args.abs_mm) if occ else None
    report["thresholds"] = {"pck_mm": args.pck_mm, "abs_mm": args.abs_mm}
    jsonschema.validate(report, M.REPORT_SCHEMA)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out, json.dumps(report, indent=2) + "\n")
    buf = io.StringIO()
    cols = ["sequence", "person", "count", "mpjpe", "pa_mpjpe", "pck", "pck_abs", "ap_root", "auc_rel"]
    w = csv.DictWriter(buf, cols, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    w.writerows(seq_rows)
    csv_path = out.with_suffix(".csv")
    atomic_write_text(csv_path, buf.getvalue())
    _manifest(args, [*pred_files, *gt_files], [out, csv_path], started, _sidecar(out, ".manifest.json"))
    print(json.dumps({k: report[k] for k in ("mpjpe", "pa_mpjpe", "pck", "pck_abs", "ap_root", "auc_rel", "count")}))
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    started = time.time()
    kinds = list(TR.GRADCHECK_THRESHOLDS) if args.model == "all" else [MODEL_FLAGS[args.model]]
    failed = False
    results = []
    for kind in kinds:
        threshold = TR.GRADCHECK_THRESHOLDS[kind]
        for seed in range(args.seed, args.seed + args.runs):
            report = TR.run_grad_check(kind, seed, args.epsilon, corrupt=args.corrupt_grad)
            ok = report.passed(threshold)
            failed |= not ok
            print(f"{kind} seed {seed}: max rel error {report.max_rel_error:.3e} "
                  f"(threshold {threshold:.0e}) {'PASS' if ok else 'FAIL'}")
            for name, err in report.per_param.items():
                print(f"  {name}: {err:.3e}")
            if not ok:
                print(f"  worst parameter: {report.worst_param} index {list(report.worst_index)}")
            results.append({
                "model": kind, "seed": seed, "threshold": threshold, "passed": ok,
                "max_rel_error": report.max_rel_error, "worst_param": report.worst_param,
                "per_param": report.per_param,
            })
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out, json.dumps(results, indent=2) + "\n")
        _manifest(args, [], [out], started, _sidecar(out, ".manifest.json"))
    return EXIT_VERIFY if failed else EXIT_OK


# argument parsing


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def _persons(text: str) -> str:
    try:
        parse_person_range(text)
    except SkeliftError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skelift", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"skelift {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic multi-person corpus")
    g.add_argument("--persons", type=_persons, default="2", help="people per scene, N or LO-HI (1..6)")
    g.add_argument("--frames", type=_positive_int, default=64)
    g.add_argument("--scenes", type=_positive_int, default=10)
    g.add_argument("--occlusion", choices=OCCLUSIONS, default="none")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--focal", type=float, default=1000.0)
    g.add_argument("--noise-gain", type=float, default=0.05)
    g.add_argument("--train", type=float, default=0.7, help="train fraction")
    g.add_argument("--val", type=float, default=0.15, help="validation fraction")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one network")
    t.add_argument("--model", choices=list(MODEL_FLAGS), required=True)
    t.add_argument("--data", required=True, help="corpus directory or sequence file")
    t.add_argument("--epochs", type=int, default=None, help="default 50 for the GCN, 30 for the TCNs")
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch-size", type=_positive_int, default=32)
    t.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    t.add_argument("--clip-norm", type=float, default=None)
    t.add_argument("--stride", type=_positive_int, default=1, help="frame subsampling for GCN training")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--gcn", help="trained GCN checkpoint (joint-TCN only)")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("-v", "--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="run the full pipeline")
    i.add_argument("--data", required=True, help="sequence file or corpus directory")
    i.add_argument("--split", choices=("train", "val", "test"), default=None)
    i.add_argument("--gcn", required=True)
    i.add_argument("--tcn-joint", required=True)
    i.add_argument("--tcn-root", required=True)
    i.add_argument("--tcn-velocity", required=True)
    i.add_argument("--passthrough", help="passthrough lifter checkpoint (with --lifter passthrough)")
    i.add_argument("--lifter", choices=("gcn", "passthrough"), default="gcn")
    i.add_argument("--no-joint-tcn", action="store_true")
    i.add_argument("--no-velocity", action="store_true")
    i.add_argument("--threads", type=_positive_int, default=None, help="worker cap (default SKELIFT_THREADS)")
    i.add_argument("--out", required=True, help="prediction file, or directory for a corpus")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--pck-mm", type=float, default=M.PCK_MM)
    e.add_argument("--abs-mm", type=float, default=M.ABS_MM)
    e.add_argument("--match", choices=("id", "greedy"), default="id")
    e.add_argument("--out", default="eval_report.json", help="report JSON; the CSV goes alongside")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    c.add_argument("--model", choices=[*[m for m in MODEL_FLAGS if m != "passthrough"], "all"], default="all")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--runs", type=_positive_int, default=1, help="consecutive seeds to check")
    c.add_argument("--epsilon", type=float, default=1e-5)
    c.add_argument("--out", default=None, help="optional JSON report")
    c.add_argument("--corrupt-grad", action="store_true", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SkeliftError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"skelift {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
