"""Command-line entry point: ``strokedetect {synth|train|detect|eval|stats}``.

Exit codes: 0 success, 1 I/O failure, 2 invalid config or input schema,
3 numerical divergence during training.

Data layout: a dataset root holds ``train/``, ``valid/`` and ``test/``;
each video is a frame directory (``meta.json`` plus PPM frames) that may
also carry ``annotations.json``.
"""
import argparse
import csv
import dataclasses
import json
import os
import sys
import warnings

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import metrics
from .dataset import SamplingConfig, build_samples
from .detector import DetectorConfig, detect, read_detections, write_detections
from .errors import ConfigError, DivergenceError, FormatError, ShapeError
from .model import ModelConfig
from .optical_flow import FlowCache, FlowConfig
from .synth import SynthConfig, generate_split
from .trainer import TrainConfig, train
from .video_io import (
    META_NAME,
    load_checkpoint,
    read_annotations,
    read_frame_dir,
    save_checkpoint,
    write_annotations,
    write_frame_dir,
)

ANNOTATION_NAME = "annotations.json"
SPLITS = ("train", "valid", "test")


# --- configuration --------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class SplitConfig:
    train: int = 2
    valid: int = 1
    test: int = 1
    seed: int = 0


@dataclasses.dataclass(frozen=True)
class EvalConfig:
    thresholds: tuple = (0.5,)


@dataclasses.dataclass(frozen=True)
class PathsConfig:
    data_dir: str = "data"
    checkpoint: str = "model.tsn"
    history: str = "history.csv"
    videos: str = "data/test"
    detections: str = "detections.json"
    annotations: str = "data/test"
    report: str = "report.json"
    flow_cache: str = ""


SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "flow": FlowConfig,
    "detector": DetectorConfig,
    "sampling": SamplingConfig,
    "synth": SynthConfig,
    "split": SplitConfig,
    "eval": EvalConfig,
    "paths": PathsConfig,
}


@dataclasses.dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    flow: FlowConfig
    detector: DetectorConfig
    sampling: SamplingConfig
    synth: SynthConfig
    split: SplitConfig
    eval: EvalConfig
    paths: PathsConfig
    base_dir: str = "."

    def path(self, name):
        value = getattr(self.paths, name)
        return value if os.path.isabs(value) else os.path.normpath(os.path.join(self.base_dir, value))


def _coerce(section, key, value, default):
    where = f"[{section}] {key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        value = float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
    elif isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        value = tuple(value)
    elif default is None and value is not None and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    return value


def _build_section(name, cls, doc):
    if not isinstance(doc, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(known))
    if unknown:
        raise ConfigError(f"[{name}] unknown key(s): {', '.join(unknown)}")
    kwargs = {k: _coerce(name, k, v, known[k].default) for k, v in doc.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def parse_config(doc, base_dir="."):
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a table")
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    parts = {name: _build_section(name, cls, doc.get(name, {})) for name, cls in SECTIONS.items()}
    cfg = RunConfig(**parts, base_dir=base_dir)
    lengths = {cfg.model.input_t, cfg.sampling.window_len, cfg.detector.window_len}
    if len(lengths) != 1:
        raise ConfigError(
            f"model.input_t ({cfg.model.input_t}), sampling.window_len ({cfg.sampling.window_len}) and "
            f"detector.window_len ({cfg.detector.window_len}) must agree"
        )
    if not cfg.eval.thresholds or not all(0 < t <= 1 for t in cfg.eval.thresholds):
        raise ConfigError("[eval] thresholds must be a non-empty list of values in (0, 1]")
    if min(cfg.split.train, cfg.split.valid, cfg.split.test) < 0:
        raise ConfigError("[split] counts must be >= 0")
    return cfg


def load_config(path):
    """Read a TOML or JSON run config; ``None`` gives all defaults."""
    if path is None:
        return parse_config({}, os.getcwd())
    with open(path, "rb") as f:
        raw = f.read()
    try:
        if str(path).endswith(".json"):
            doc = json.loads(raw)
        else:
            doc = tomllib.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(doc, os.path.dirname(os.path.abspath(path)))


# --- helpers --------------------------------------------------------------


def _require(path, what):
    if not os.path.exists(path):
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def video_dirs(root):
    """A single frame directory, or the sorted frame directories inside ``root``."""
    if os.path.exists(os.path.join(root, META_NAME)):
        return [root]
    return [
        os.path.join(root, name) for name in sorted(os.listdir(root))
        if os.path.exists(os.path.join(root, name, META_NAME))
    ]


def annotation_files(root):
    if os.path.isfile(root):
        return [root]
    if os.path.exists(os.path.join(root, ANNOTATION_NAME)):
        return [os.path.join(root, ANNOTATION_NAME)]
    out = []
    for name in sorted(os.listdir(root)):
        sub = os.path.join(root, name)
        if os.path.isdir(sub):
            out += annotation_files(sub)
    return out


def _flow_cache(cfg):
    return FlowCache(cfg.path("flow_cache")) if cfg.paths.flow_cache else None


def _say(msg):
    print(msg, file=sys.stderr, flush=True)


# --- commands -------------------------------------------------------------


def cmd_synth(cfg, args):
    out_dir = args.out_dir or cfg.path("data_dir")
    sp = cfg.split
    splits = generate_split(cfg.synth, sp.train, sp.valid, sp.test, sp.seed)
    rows = []
    for name, videos in zip(SPLITS, splits):
        if not videos:
            continue
        for seq, ann in videos:
            vdir = os.path.join(out_dir, name, ann.video_id)
            write_frame_dir(seq, vdir)
            write_annotations(ann, os.path.join(vdir, ANNOTATION_NAME))
        rows.append((name, metrics.stroke_stats([a for _, a in videos])))
    sys.stdout.write(metrics.render_stats_table(rows))
    return 0


def _samples_for(cfg, split_dir, cache):
    samples = []
    for vdir in video_dirs(split_dir):
        ann = read_annotations(_require(os.path.join(vdir, ANNOTATION_NAME), "annotations"))
        seq = read_frame_dir(vdir)
        samples += build_samples(seq, ann, cfg.sampling, cfg.flow, cfg.model.input_w, cfg.model.input_h,
                                 cache, cfg.model.dtype)
    return samples


def cmd_train(cfg, args):
    data_dir = _require(args.data_dir or cfg.path("data_dir"), "data directory")
    train_dir = _require(os.path.join(data_dir, "train"), "training split")
    tcfg = cfg.train
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.no_shuffle:
        overrides["shuffle"] = False
    try:
        tcfg = dataclasses.replace(tcfg, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    cache = _flow_cache(cfg)
    train_samples = _samples_for(cfg, train_dir, cache)
    valid_dir = os.path.join(data_dir, "valid")
    val_samples = _samples_for(cfg, valid_dir, cache) if os.path.isdir(valid_dir) else []
    if not train_samples:
        raise FormatError(f"{train_dir}: no training samples (no annotated videos of sufficient length)")
    _say(f"training on {len(train_samples)} samples, validating on {len(val_samples)}")

    def progress(rec):
        val = "-" if rec.val_acc is None else f"{rec.val_acc:.4f}"
        _say(f"epoch {rec.epoch:4d}  loss {rec.train_loss:.6f}  train_acc {rec.train_acc:.4f}  val_acc {val}")

    params, history = train(cfg.model, train_samples, val_samples, tcfg, on_epoch=progress)
    ckpt = args.checkpoint or cfg.path("checkpoint")
    hist_path = cfg.path("history")
    _ensure_parent(ckpt)
    _ensure_parent(hist_path)
    save_checkpoint(params, ckpt)
    history.write_csv(hist_path)
    _say(f"best epoch {history.best_epoch}; checkpoint written to {ckpt}")
    return 0


def cmd_detect(cfg, args):
    ckpt = _require(args.checkpoint or cfg.path("checkpoint"), "checkpoint")
    videos = _require(args.videos or cfg.path("videos"), "video directory")
    out = args.out or cfg.path("detections")
    params, _ = load_checkpoint(ckpt, cfg.model.param_shapes())
    cache = _flow_cache(cfg)
    per_video = []
    dirs = video_dirs(videos)
    if not dirs:
        raise FormatError(f"{videos}: no frame directories found")
    for vdir in dirs:
        vid = os.path.basename(os.path.normpath(vdir))
        seq = read_frame_dir(vdir)
        dets = detect(params, seq, cfg.model, cfg.flow, cfg.detector, cache, vid)
        per_video.append((vid, dets))
        _say(f"{vid}: {len(dets)} detection(s)")
    _ensure_parent(out)
    write_detections(out, per_video)
    return 0


def _companion(report_path, suffix):
    stem, _ = os.path.splitext(report_path)
    return stem + suffix


def cmd_eval(cfg, args):
    det_path = _require(args.detections or cfg.path("detections"), "detections")
    ann_root = _require(args.annotations or cfg.path("annotations"), "annotations")
    out = args.out or cfg.path("report")
    dets = dict(read_detections(det_path))
    anns = {}
    for path in annotation_files(ann_root):
        ann = read_annotations(path)
        if ann.video_id in anns:
            raise FormatError(f"{path}: duplicate video_id {ann.video_id!r}")
        anns[ann.video_id] = ann
    if not anns:
        raise FormatError(f"{ann_root}: no annotation files found")
    stray = sorted(set(dets) - set(anns))
    if stray:
        raise FormatError(f"detections reference unannotated video(s): {', '.join(stray)}")

    thresholds = list(cfg.eval.thresholds)
    per_video = {v: (dets.get(v, []), a) for v, a in anns.items()}
    report = metrics.evaluate(per_video, thresholds)
    _, _, curves = metrics.mean_average_precision(
        {v: (d, a.strokes) for v, (d, a) in per_video.items()}, thresholds, return_curves=True
    )
    _ensure_parent(out)
    with open(out, "w") as f:
        f.write(report.to_json())
    text = report.render()
    with open(_companion(out, ".txt"), "w") as f:
        f.write(text)
    with open(_companion(out, ".pr.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["threshold", "rank", "precision", "recall"])
        for th, points in zip(thresholds, curves):
            for rank, p, r in points:
                w.writerow([repr(th), rank, repr(p), repr(r)])
    with open(_companion(out, ".giou.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["video_id", "giou"])
        for v, g in report.giou_per_video.items():
            w.writerow([v, repr(g)])
    sys.stdout.write(text)
    return 0


def cmd_stats(cfg, args):
    if args.paths:
        groups = [(os.path.basename(os.path.normpath(p)) or p, _require(p, "annotations")) for p in args.paths]
    else:
        data_dir = _require(cfg.path("data_dir"), "data directory")
        groups = [(s, os.path.join(data_dir, s)) for s in SPLITS if os.path.isdir(os.path.join(data_dir, s))]
    rows = []
    for name, path in groups:
        files = annotation_files(path)
        if not files:
            raise FormatError(f"{path}: no annotation files found")
        rows.append((name, metrics.stroke_stats([read_annotations(p) for p in files])))
    sys.stdout.write(metrics.render_stats_table(rows))
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "detect": cmd_detect, "eval": cmd_eval, "stats": cmd_stats}


def build_parser():
    parser = argparse.ArgumentParser(prog="strokedetect", description="Two-stream 3D-CNN stroke detection.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML or JSON run config (defaults when omitted)")
        return p

    p = add("synth", "generate a synthetic train/valid/test dataset")
    p.add_argument("--out-dir", help="dataset root (default: paths.data_dir)")
    p = add("train", "train the two-stream classifier")
    p.add_argument("--data-dir", help="dataset root with train/ and optional valid/")
    p.add_argument("--checkpoint", help="output checkpoint path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-shuffle", action="store_true", help="keep sample order fixed across epochs")
    p = add("detect", "detect strokes in one video or a directory of videos")
    p.add_argument("--checkpoint")
    p.add_argument("--videos", help="frame directory or directory of frame directories")
    p.add_argument("--out", help="detections JSON")
    p = add("eval", "score detections against annotations")
    p.add_argument("--detections")
    p.add_argument("--annotations", help="annotations file, video directory or split directory")
    p.add_argument("--out", help="report JSON; .txt, .pr.csv and .giou.csv are written alongside")
    p = add("stats", "stroke statistics table")
    p.add_argument("paths", nargs="*", help="annotation files or directories, one table row each")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    error = None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            cfg = load_config(args.config)
            code = COMMANDS[args.command](cfg, args)
        except (ConfigError, FormatError, ShapeError) as exc:
            code, error = 2, exc
        except DivergenceError as exc:
            code, error = 3, exc
        except OSError as exc:
            code, error = 1, exc
    for w in caught:
        _say(f"strokedetect: warning: {w.message}")
    if error is not None:
        _say(f"strokedetect: error: {error}")
    return code


if __name__ == "__main__":
    sys.exit(main())
