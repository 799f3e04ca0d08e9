"""Command-line pipeline: features, initialization, training, inference,
annotation, evaluation, and synthetic data generation.

Artifacts are written atomically (temp file + rename) and embed the config
hash; re-running a command with identical config and inputs reproduces the
output byte for byte. Exit codes: 0 success, 1 validation error (bad usage
or missing input), 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import descriptors as desc
from .config import load_config
from .energy import ModelDims, load_model, save_model
from .evaluation import (DetectionCriterion, SyntheticSpec, accuracy,
                         intervals_from_frames, plant_synthetic, pooled_pr)
from .inference import infer
from .learning import TrainingVideo, initialize, train
from .skeleton import (ActionInterval, ParseError, SchemaError, get_schema,
                       load_annotations, load_labels, parse_skeleton,
                       save_annotations, save_labels)


class UsageError(ValueError):
    """Bad invocation or missing input; maps to exit code 1."""


def _atomic_write(path: Path, data: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def _require(path: str | Path, kind: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{kind} not found: {p}")
    return p


def _json_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


# ---------------------------------------------------------------------------
# Feature store
# ---------------------------------------------------------------------------

def save_features(out_dir: Path, video_id: str, x: np.ndarray,
                  config_hash: str) -> None:
    array_path = out_dir / f"{video_id}.npy"
    out_dir.mkdir(parents=True, exist_ok=True)
    tmp = array_path.with_name(array_path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.save(fh, x)
    os.replace(tmp, array_path)
    header = {"video_id": video_id, "frames": int(x.shape[0]),
              "regions": int(x.shape[1]), "dim": int(x.shape[2]),
              "config_hash": config_hash}
    _atomic_write(out_dir / f"{video_id}.json", _json_dumps(header))


def load_features(features_dir: str | Path) -> dict[str, np.ndarray]:
    directory = _require(features_dir, "features directory")
    out = {}
    for header_path in sorted(directory.glob("*.json")):
        if header_path.name == "pca.json":
            continue
        header = json.loads(header_path.read_text())
        video_id = header["video_id"]
        out[video_id] = np.load(directory / f"{video_id}.npy")
    if not out:
        raise UsageError(f"no feature files under {directory}")
    return out


def _load_training_set(features_dir, annotations_path, labels_path
                       ) -> tuple[list[TrainingVideo], int, int]:
    features = load_features(features_dir)
    with open(_require(annotations_path, "annotation file")) as fh:
        intervals = load_annotations(fh)
    with open(_require(labels_path, "labels file")) as fh:
        labels = load_labels(fh)
    videos = []
    for video_id in sorted(features):
        if video_id not in labels:
            raise UsageError(f"video {video_id!r} missing from labels file")
        videos.append(TrainingVideo(
            video_id=video_id, x=features[video_id], y=labels[video_id],
            intervals=intervals.get(video_id, [])))
    num_actions = 1 + max((iv.action_id for ivs in intervals.values()
                           for iv in ivs), default=-1)
    num_classes = 1 + max(labels.values())
    if num_actions < 1:
        raise UsageError("annotations define no atomic actions")
    return videos, num_actions, num_classes


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------

def _geo_task(payload):
    text, depth = payload
    seq = parse_skeleton(text)
    if seq.joints.shape[-1] == 2:
        seq = desc.lift_2d(seq, depth=depth)
    return seq.video_id, desc.build_descriptors(seq, mode="geo")


def _map_jobs(func, payloads, jobs):
    """Order-preserving map, fanned out across processes when jobs > 1."""
    if jobs <= 1:
        return [func(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, payloads))


def cmd_features(args) -> int:
    config = load_config(args.config, _overrides(args))
    schema = get_schema(config.schema)
    paths = sorted(Path(_require(args.skeletons, "skeleton directory"))
                   .glob("*.jsonl"))
    if not paths:
        raise UsageError(f"no *.jsonl skeleton files under {args.skeletons}")
    out_dir = Path(args.out)
    config_hash = config.hash()

    if config.mode == "geo":
        payloads = [(p.read_text(), config.lift_depth) for p in paths]
        for video_id, x in _map_jobs(_geo_task, payloads, config.jobs):
            save_features(out_dir, video_id, x, config_hash)
        print(f"wrote {len(paths)} geo feature files to {out_dir}")
        return 0

    sequences = []
    for path in paths:
        seq = parse_skeleton(path.read_text())
        if schema.dims == 2 and seq.joints.shape[-1] == 2:
            seq = desc.lift_2d(seq, depth=config.lift_depth)
        sequences.append(seq)

    motion_mode = config.mode.split("+", 1)[1]
    sidecars = {}
    if motion_mode == "precomputed":
        sidecar_dir = Path(_require(args.sidecar_dir,
                                    "motion sidecar directory"))
        for seq in sequences:
            sidecar_path = _require(sidecar_dir / f"{seq.video_id}.jsonl",
                                    "motion sidecar")
            sidecars[seq.video_id] = desc.load_motion_sidecar(
                sidecar_path.read_text(), seq.num_frames, seq.num_joints)

    # PCA is fit over the whole dataset, so raw motion comes first.
    raw_per_video = {
        seq.video_id: desc.raw_motion_vectors(
            seq, get_schema(seq.schema), motion_mode, window=config.window,
            sidecar=sidecars.get(seq.video_id))
        for seq in sequences}
    pca_models = []
    for r in range(schema.num_regions):
        stacked = np.concatenate([raw_per_video[s.video_id][r]
                                  for s in sequences])
        pca_models.append(desc.fit_pca(stacked, out_dim=config.pca_dim))
    for seq in sequences:
        x = desc.build_descriptors(seq, mode=config.mode,
                                   pca_models=pca_models,
                                   window=config.window,
                                   sidecar=sidecars.get(seq.video_id))
        save_features(out_dir, seq.video_id, x, config_hash)
    _atomic_write(out_dir / "pca.json", _json_dumps(
        {"config_hash": config_hash,
         "models": [m.to_dict() for m in pca_models]}))
    print(f"wrote {len(sequences)} feature files (D="
          f"{desc.GEO_DIM + config.pca_dim}) to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# init-dictionary / init-assignments
# ---------------------------------------------------------------------------

def _run_initialize(args, config):
    videos, num_actions, _ = _load_training_set(
        args.features, args.annotations, args.labels)
    init = initialize(videos, config.num_poselets, num_actions,
                      config.train_config())
    return videos, num_actions, init


def cmd_init_dictionary(args) -> int:
    config = load_config(args.config, _overrides(args))
    _, num_actions, init = _run_initialize(args, config)
    summary = {
        "num_poselets": config.num_poselets,
        "num_actions": num_actions,
        "actionlet_counts": init.dictionary.counts.tolist(),
        "num_actionlets": init.dictionary.num_actionlets,
        "u_of_v": init.dictionary.u_of_v.tolist(),
        "config_hash": config.hash(),
    }
    _atomic_write(Path(args.out), _json_dumps(summary))
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


def cmd_init_assignments(args) -> int:
    config = load_config(args.config, _overrides(args))
    videos, num_actions, init = _run_initialize(args, config)
    if init.p1 is None:
        raise UsageError("assignments come from annotations under full "
                         "supervision; nothing to solve")
    doc = {"config_hash": config.hash(),
           "infeasible": init.p1.infeasible,
           "assignments": {}}
    with_intervals = [v for v in videos if v.intervals]
    for video, b in zip(with_intervals, init.p1.assignments):
        doc["assignments"][video.video_id] = \
            [np.flatnonzero(b[:, q]).tolist()
             for q in range(b.shape[1])]
    _atomic_write(Path(args.out), _json_dumps(doc))
    print(f"wrote region assignments for {len(with_intervals)} videos "
          f"to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    config = load_config(args.config, _overrides(args))
    videos, num_actions, num_classes = _load_training_set(
        args.features, args.annotations, args.labels)
    train_config = config.train_config()
    t0 = time.time()
    init = initialize(videos, config.num_poselets, num_actions, train_config)
    dims = ModelDims(R=videos[0].x.shape[1], K=config.num_poselets,
                     D=videos[0].x.shape[2],
                     A=init.dictionary.num_actionlets, S=num_actions,
                     Y=num_classes)
    result = train(videos, dims, train_config, init)

    pca_path = Path(args.features) / "pca.json"
    pca_models = None
    if pca_path.exists():
        doc = json.loads(pca_path.read_text())
        pca_models = [desc.PcaModel.from_dict(m) for m in doc["models"]]
    _atomic_write(Path(args.out),
                  save_model(result.params, pca_models=pca_models,
                             config_hash=config.hash()) + "\n")

    if args.log:
        lines = []
        for i, objective in enumerate(result.objective_trace):
            entry = {"iteration": i, "objective": objective,
                     "wall_time": round(time.time() - t0, 3)}
            if 0 < i <= len(result.cp_infos):
                info = result.cp_infos[i - 1]
                entry["violation"] = info.violation
                entry["cutting_plane_iterations"] = info.iterations
            lines.append(_json_dumps(entry))
        _atomic_write(Path(args.log), "".join(lines))
    print(f"trained in {time.time() - t0:.1f}s; objective "
          f"{result.objective_trace[0]:.4g} -> "
          f"{result.objective_trace[-1]:.4g} ({result.stopped_reason}); "
          f"model written to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# infer / annotate
# ---------------------------------------------------------------------------

def _infer_task(payload):
    model_text, x, beam = payload
    params, _pca, _hash = load_model(model_text)
    return infer(x, params, beam=beam)


def _predict(args, config):
    model_text = _require(args.model, "model file").read_text()
    params, _pca, _hash = load_model(model_text)
    features = load_features(args.features)
    ids = sorted(features)
    if config.jobs > 1:
        payloads = [(model_text, features[vid], config.beam) for vid in ids]
        outs = _map_jobs(_infer_task, payloads, config.jobs)
    else:
        outs = [infer(features[vid], params, beam=config.beam)
                for vid in ids]
    return params, dict(zip(ids, outs))


def _frames_csv(params, results) -> str:
    u_of_v = params.u_of_v()
    lines = ["video_id,t,region,z,v,u"]
    for video_id, res in results.items():
        lab = res.labeling
        for t in range(lab.num_frames):
            for r in range(lab.num_regions):
                v = lab.v[t, r]
                lines.append(f"{video_id},{t},{r},{lab.z[t, r]},{v},"
                             f"{u_of_v[v]}")
    return "\n".join(lines) + "\n"


def cmd_infer(args) -> int:
    config = load_config(args.config, _overrides(args))
    params, results = _predict(args, config)
    out_dir = Path(args.out)
    u_of_v = params.u_of_v()
    json_lines = []
    for video_id, res in results.items():
        lab = res.labeling
        frames = [{"t": t, "region": r, "z": int(lab.z[t, r]),
                   "v": int(lab.v[t, r]), "u": int(u_of_v[lab.v[t, r]])}
                  for t in range(lab.num_frames)
                  for r in range(lab.num_regions)]
        json_lines.append(_json_dumps(
            {"video_id": video_id, "y": res.y, "energy": res.energy,
             "frames": frames}))
    _atomic_write(out_dir / "predictions.jsonl", "".join(json_lines))
    _atomic_write(out_dir / "predictions.csv", _frames_csv(params, results))
    _atomic_write(out_dir / "pred_labels.csv",
                  save_labels({vid: res.y for vid, res in results.items()}))
    print(f"wrote predictions for {len(results)} videos to {out_dir}")
    return 0


def cmd_annotate(args) -> int:
    config = load_config(args.config, _overrides(args))
    params, results = _predict(args, config)
    _atomic_write(Path(args.out), _frames_csv(params, results))
    _atomic_write(Path(args.labels_out),
                  save_labels({vid: res.y for vid, res in results.items()}))
    print(f"wrote per-frame annotations for {len(results)} videos "
          f"to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _frames_to_intervals(path, min_run) -> dict[str, list[ActionInterval]]:
    import csv as _csv

    rows: dict[str, dict] = {}
    with open(_require(path, "prediction frames file")) as fh:
        for row in _csv.DictReader(fh):
            entry = rows.setdefault(row["video_id"], {})
            entry[(int(row["t"]), int(row["region"]))] = int(row["u"])
    out = {}
    for video_id, cells in rows.items():
        T = 1 + max(t for t, _ in cells)
        R = 1 + max(r for _, r in cells)
        u = np.zeros((T, R), dtype=int)
        for (t, r), value in cells.items():
            u[t, r] = value
        out[video_id] = intervals_from_frames(u, min_run=min_run)
    return out


def cmd_eval(args) -> int:
    config = load_config(args.config, _overrides(args))
    with open(_require(args.pred_labels, "predicted labels file")) as fh:
        pred_labels = load_labels(fh)
    with open(_require(args.truth_labels, "truth labels file")) as fh:
        truth_labels = load_labels(fh)
    metrics = {"accuracy": accuracy(pred_labels, truth_labels),
               "num_videos": len(truth_labels),
               "config_hash": config.hash()}
    if args.pred_frames and args.truth_annotations:
        preds = _frames_to_intervals(args.pred_frames, config.min_run)
        with open(_require(args.truth_annotations,
                           "truth annotations file")) as fh:
            truths = load_annotations(fh)
        criterion = DetectionCriterion(min_overlap=config.min_overlap)
        precision, recall = pooled_pr(preds, truths, criterion,
                                      match_region=False)
        metrics["detection"] = {"precision": precision, "recall": recall}
        known_regions = all(iv.region >= 0 for ivs in truths.values()
                            for iv in ivs)
        if known_regions:
            precision, recall = pooled_pr(preds, truths, criterion,
                                          match_region=True)
            metrics["spatiotemporal"] = {"precision": precision,
                                         "recall": recall}
    _atomic_write(Path(args.out), _json_dumps(metrics))
    print(json.dumps(metrics, sort_keys=True, indent=2))
    return 0


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        num_classes=args.classes, num_actions=args.actions,
        num_actionlets=args.actionlets, num_poselets=args.poselets,
        num_regions=args.regions, dim=args.dim,
        frames_range=(args.min_frames, args.max_frames),
        videos_per_class=args.videos_per_class + args.test_per_class,
        sigma=args.sigma, noise_frame_fraction=args.noise_fraction,
        actions_per_class=args.actions_per_class, seed=args.seed)
    dataset = plant_synthetic(spec)
    out = Path(args.out)
    config_hash = f"synth-{args.seed}"
    splits = {"train": [], "test": []}
    for video in dataset.videos:
        index = int(video.video_id.rsplit("_", 1)[1])
        split = "train" if index < args.videos_per_class else "test"
        splits[split].append(video)
    for split, videos in splits.items():
        if not videos:
            continue
        base = out / split
        annotations = {}
        labels = {}
        frame_lines = ["video_id,t,region,z,v,u"]
        for video in videos:
            save_features(base / "features", video.video_id, video.x,
                          config_hash)
            annotations[video.video_id] = video.intervals
            labels[video.video_id] = video.y
            T, R = video.u.shape
            for t in range(T):
                for r in range(R):
                    frame_lines.append(
                        f"{video.video_id},{t},{r},{video.z[t, r]},"
                        f"{video.v[t, r]},{video.u[t, r]}")
        _atomic_write(base / "annotations.csv",
                      save_annotations(annotations))
        _atomic_write(base / "labels.csv", save_labels(labels))
        _atomic_write(base / "frames.csv", "\n".join(frame_lines) + "\n")
    meta = {"u_of_v": dataset.u_of_v.tolist(),
            "num_classes": spec.num_classes,
            "num_actions": spec.num_actions,
            "seed": spec.seed,
            "sigma": spec.sigma,
            "noise_frame_fraction": spec.noise_frame_fraction}
    _atomic_write(out / "meta.json", _json_dumps(meta))
    print(f"planted {len(dataset.videos)} videos "
          f"({len(splits['train'])} train / {len(splits['test'])} test) "
          f"under {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _overrides(args) -> dict:
    keys = ("schema", "mode", "window", "pca_dim", "num_poselets",
            "supervision", "beam", "seed", "C", "min_overlap", "min_run",
            "jobs", "max_cccp_iters", "max_cutting_plane_iters", "use_gc")
    return {k: getattr(args, k) for k in keys if hasattr(args, k)}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hieract",
                     description="Hierarchical labeling of complex actions "
                                 "from body-joint sequences")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", default=None,
                       help="INI config file; flags override its keys")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("features", help="compute per-region descriptors")
    common(p)
    p.add_argument("--skeletons", required=True,
                   help="directory of *.jsonl skeleton files")
    p.add_argument("--out", required=True, help="feature directory")
    p.add_argument("--schema", default=None)
    p.add_argument("--mode", default=None,
                   choices=["geo", "geo+velocity", "geo+precomputed"])
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--pca-dim", dest="pca_dim", type=int, default=None)
    p.add_argument("--sidecar-dir", default=None,
                   help="per-video motion sidecars for geo+precomputed")
    p.add_argument("--jobs", type=int, default=None,
                   help="worker processes for per-video stages")
    p.set_defaults(func=cmd_features)

    for name, func in (("init-dictionary", cmd_init_dictionary),
                       ("init-assignments", cmd_init_assignments)):
        p = sub.add_parser(name)
        common(p)
        p.add_argument("--features", required=True)
        p.add_argument("--annotations", required=True)
        p.add_argument("--labels", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--num-poselets", dest="num_poselets", type=int,
                       default=None)
        p.add_argument("--supervision", default=None,
                       choices=["full", "temporal", "video"])
        p.set_defaults(func=func)

    p = sub.add_parser("train", help="fit the model")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--supervision", default=None,
                   choices=["full", "temporal", "video"])
    p.add_argument("--num-poselets", dest="num_poselets", type=int,
                   default=None)
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("--C", type=float, default=None)
    p.add_argument("--max-cccp-iters", dest="max_cccp_iters", type=int,
                   default=None)
    p.add_argument("--max-cutting-plane-iters",
                   dest="max_cutting_plane_iters", type=int, default=None)
    p.add_argument("--no-gc", dest="use_gc", action="store_false",
                   default=None, help="disable the garbage collector label")
    p.add_argument("--log", default=None, help="training log (JSON lines)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="label videos with a trained model")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("annotate", help="per-frame CSV annotations")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="frames CSV path")
    p.add_argument("--labels-out", dest="labels_out", required=True,
                   help="predicted video labels CSV path")
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("eval", help="score predictions against truth")
    common(p)
    p.add_argument("--pred-labels", dest="pred_labels", required=True)
    p.add_argument("--truth-labels", dest="truth_labels", required=True)
    p.add_argument("--pred-frames", dest="pred_frames", default=None)
    p.add_argument("--truth-annotations", dest="truth_annotations",
                   default=None)
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.add_argument("--min-overlap", dest="min_overlap", type=float,
                   default=None)
    p.add_argument("--min-run", dest="min_run", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--actions", type=int, default=4)
    p.add_argument("--actionlets", type=int, default=6)
    p.add_argument("--poselets", type=int, default=8)
    p.add_argument("--regions", type=int, default=2)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--min-frames", dest="min_frames", type=int, default=30)
    p.add_argument("--max-frames", dest="max_frames", type=int, default=60)
    p.add_argument("--videos-per-class", dest="videos_per_class", type=int,
                   default=20)
    p.add_argument("--test-per-class", dest="test_per_class", type=int,
                   default=0)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--noise-fraction", dest="noise_fraction", type=float,
                   default=0.0)
    p.add_argument("--actions-per-class", dest="actions_per_class",
                   type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            parser.print_usage(sys.stderr)
            return 1
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, SchemaError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
