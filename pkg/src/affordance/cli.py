"""Command-line entry point: ``affordance <command> [options]``.

Commands
    labelgen        depth PNGs -> tri-state label PNGs + JSON provenance
    train-midlevel  images + labels -> one element bank per affordance
    train-grid      images + labels -> grid model + training log
    predict         model(s) + images -> soft prediction PNGs
    eval            predictions + labels -> AP report (+ PR curves, SVG)
    synth           write, render and label the synthetic suite; check it
                    against the analytic oracle

Dataset layout shared by the commands::

    <dir>/<stem>.png            depth (16-bit mm) or RGB image
    <dir>/<stem>.intrinsics     optional per-file intrinsics
    <dir>/intrinsics.txt        optional shared intrinsics
    <labels>/<stem>_<aff>.png   label maps (0 NOT, 128 UNKNOWN, 255 SUPPORTS)
    <pred>/<stem>_<aff>.png     soft predictions, 16-bit, value = score * 65535

Options may also come from a TOML file (``--config``); command-line flags
win.  Keys are the long option names with dashes replaced by underscores,
either at top level or inside any table.

Exit codes: 0 ok, 2 input error, 3 geometry failure (DegenerateScene),
4 training failure, 5 evaluation failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python < 3.11
    import tomli
from PIL import Image

from . import __version__
from . import evaluation as ev
from . import grid_predictor as gp
from . import midlevel as ml
from .errors import (AffordanceError, ClusterCollapsed, DegenerateFit, DegenerateScene,
                     DimensionMismatch, NonFiniteLoss, NoPositives, NoQualifyingPatches)
from .geometry import CameraIntrinsics, DepthMap
from .io import (label_map_path, read_depth_png, read_intrinsics, read_label_maps, read_label_png,
                 read_rgb, write_depth_png, write_intrinsics, write_label_maps, write_rgb)
from .labeler import AFFORDANCES, AffordanceMap, HumanDims, LabelConfig, Thresholds, generate_labels

EXIT_OK, EXIT_INPUT, EXIT_GEOMETRY, EXIT_TRAINING, EXIT_EVAL = 0, 2, 3, 4, 5

log = logging.getLogger("affordance")


class InputError(Exception):
    """Missing or unreadable input; maps to exit code 2."""


# -- configuration -------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Resolved settings of one invocation (flags over config file over defaults)."""
    command: str
    values: Dict[str, Any]

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None

    def as_json(self) -> Dict[str, Any]:
        def plain(v):
            if isinstance(v, Path):
                return str(v)
            if isinstance(v, list):
                return [plain(x) for x in v]
            return v
        return {k: plain(v) for k, v in sorted(self.values.items())}


# (name, type, default, help, (min, max) or None); None bounds = unchecked
_LABEL_OPTS = [
    ("voxel_size", float, 0.10, "voxel edge in metres", (0.01, 1.0)),
    ("threshold_low", float, Thresholds.low, "response at or below which a voxel is NOT", (0.0, 1.0)),
    ("threshold_high", float, Thresholds.high, "response at or above which a voxel SUPPORTS", (0.0, 1.0)),
    ("max_unknown", float, Thresholds.max_unknown, "largest unknown fraction for a SUPPORTS", (0.0, 1.0)),
    ("human_height", float, HumanDims.height, "body height in metres", (0.5, 2.5)),
    ("shoulder_width", float, HumanDims.shoulder_width, "shoulder width in metres", (0.1, 1.5)),
    ("ransac_iterations", int, 1000, "frame-estimation RANSAC iterations", (1, 10 ** 6)),
    ("no_densify", bool, False, "skip sub-pixel surface densification", None),
]
_MID_OPTS = [
    ("window_cells", int, 10, "element window side in HOG cells", (2, 64)),
    ("cell", int, 8, "HOG cell side in pixels", (2, 64)),
    ("k", int, 20, "clusters per k-means restart", (1, 10 ** 4)),
    ("restarts", int, 5, "k-means restarts", (1, 100)),
    ("consistency", float, 0.75, "mean pairwise Jaccard to freeze a cluster", (0.0, 1.0)),
    ("cardinality", int, 100, "maximum members per element", (1, 10 ** 5)),
    ("max_elements", int, 40, "elements kept per affordance", (1, 10 ** 4)),
    ("svm_c", float, 0.1, "SVM hinge-loss weight", (1e-6, 1e6)),
    ("rounds", int, 3, "alternation rounds", (1, 100)),
    ("samples_per_image", int, 60, "positive windows drawn per image", (1, 10 ** 5)),
    ("negatives_per_image", int, 60, "background windows drawn per image", (1, 10 ** 5)),
    ("min_coverage", float, 0.25, "SUPPORTS fraction for a positive window", (1e-6, 1.0)),
    ("score_floor", float, 0.1, "calibrated score needed to transfer a form", (0.0, 1.0)),
    ("nms_radius", int, 4, "non-maximum suppression radius in cells", (0, 64)),
    ("colour_weight", float, 0.0, "weight of mean cell colour appended to HOG", (0.0, 100.0)),
]
_GRID_OPTS = [
    ("grid_m", int, 50, "output grid rows", (1, 1000)),
    ("grid_n", int, 50, "output grid columns", (1, 1000)),
    ("learning_rate", float, 0.5, "SGD step size", (0.0, 1e3)),
    ("momentum", float, 0.9, "SGD momentum", (0.0, 1.0)),
    ("batch_size", int, 16, "images per SGD step", (1, 10 ** 6)),
    ("epochs", int, 30, "passes over the data", (0, 10 ** 5)),
    ("weight_decay", float, 1e-4, "L2 penalty on weights", (0.0, 1e3)),
]
_COMMON = [
    ("seed", int, 0, "random seed", (0, 2 ** 32 - 1)),
    ("jobs", int, 1, "worker processes for per-file work", (1, 1024)),
    ("affordances", str, ",".join(AFFORDANCES), "comma-separated affordances", None),
]


def _add_options(p: argparse.ArgumentParser, opts):
    for name, typ, default, help_, _ in opts:
        flag = "--" + name.replace("_", "-")
        if typ is bool:
            p.add_argument(flag, action="store_const", const=True, default=None,
                           help=f"{help_} (default {default})")
        else:
            p.add_argument(flag, type=typ, default=None, help=f"{help_} (default {default})")


def _flatten(table: Dict[str, Any]) -> Dict[str, Any]:
    out = {}
    for k, v in table.items():
        if isinstance(v, dict):
            out.update(_flatten(v))
        else:
            out[k.replace("-", "_")] = v
    return out


def resolve(args: argparse.Namespace, opts, paths: Sequence[str]) -> RunConfig:
    """Merge defaults, the TOML file and flags, then check ranges."""
    file_vals: Dict[str, Any] = {}
    if args.config is not None:
        try:
            with open(args.config, "rb") as fh:
                file_vals = _flatten(tomli.load(fh))
        except (OSError, tomli.TOMLDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from exc
    values: Dict[str, Any] = {}
    for name, typ, default, _, bounds in opts:
        v = getattr(args, name, None)
        if v is None:
            v = file_vals.get(name, default)
        try:
            v = typ(v)
        except (TypeError, ValueError) as exc:
            raise InputError(f"{name}: {exc}") from exc
        if bounds is not None and not bounds[0] <= v <= bounds[1]:
            raise InputError(f"{name} = {v} outside [{bounds[0]}, {bounds[1]}]")
        values[name] = v
    for name in paths:
        v = getattr(args, name, None)
        if v is None:
            v = file_vals.get(name)
        values[name] = [Path(x) for x in v] if isinstance(v, list) else (Path(v) if v else None)
    affs = [a.strip() for a in values.get("affordances", "").split(",") if a.strip()]
    unknown = set(affs) - set(AFFORDANCES)
    if unknown:
        raise InputError(f"unknown affordances {sorted(unknown)}")
    values["affordances"] = ",".join(affs)
    return RunConfig(args.command, values)


def _affordances(cfg: RunConfig) -> List[str]:
    return cfg.affordances.split(",")


# -- shared helpers ------------------------------------------------------------

def _require_dir(path: Optional[Path], what: str) -> Path:
    if path is None:
        raise InputError(f"no {what} directory given")
    if not path.is_dir():
        raise InputError(f"{what} directory {path} does not exist")
    return path


def _stems(directory: Path) -> List[str]:
    stems = sorted(p.stem for p in directory.glob("*.png"))
    if not stems:
        raise InputError(f"no .png files in {directory}")
    return stems


def _intrinsics_for(directory: Path, stem: str, shape) -> Optional[CameraIntrinsics]:
    for p in (directory / f"{stem}.intrinsics", directory / "intrinsics.txt"):
        if p.exists():
            return read_intrinsics(p, shape)
    return None


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _provenance(cfg: RunConfig, **extra) -> Dict[str, Any]:
    return {"tool": "affordance", "version": __version__, "command": cfg.command,
            "config": cfg.as_json(), **extra}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _map_jobs(fn: Callable, items: Sequence, jobs: int) -> List:
    """Ordered map, in worker processes when ``jobs > 1``."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _load_dataset(images: Path, labels: Path, affordances: Sequence[str]):
    stems = _stems(images)
    imgs, maps = [], []
    for s in stems:
        try:
            imgs.append(read_rgb(images / f"{s}.png"))
        except OSError as exc:
            raise InputError(f"cannot read image {s}: {exc}") from exc
        m = read_label_maps(labels, s)
        missing = [a for a in affordances if a not in m]
        if missing:
            raise InputError(f"{s}: missing label maps for {missing}")
        maps.append(m)
    return stems, imgs, maps


# -- labelgen ------------------------------------------------------------------

def _label_config(cfg: RunConfig) -> LabelConfig:
    human = dataclasses.replace(HumanDims(), height=cfg.human_height,
                                shoulder_width=cfg.shoulder_width)
    return LabelConfig(voxel_size=cfg.voxel_size,
                       thresholds=Thresholds(cfg.threshold_low, cfg.threshold_high, cfg.max_unknown),
                       human=human, seed=cfg.seed, ransac_iterations=cfg.ransac_iterations,
                       densify=not cfg.no_densify)


def _labelgen_one(job) -> Tuple[str, str, Any]:
    """Worker: (stem, status, payload); status in ok / input / geometry."""
    depth_dir, stem, label_cfg, out_dir, affs = job
    try:
        with Image.open(depth_dir / f"{stem}.png") as im:
            shape = (im.height, im.width)
        depth = read_depth_png(depth_dir / f"{stem}.png", _intrinsics_for(depth_dir, stem, shape))
    except (OSError, ValueError) as exc:
        return stem, "input", str(exc)
    try:
        maps, info = generate_labels(depth, label_cfg)
    except DegenerateScene as exc:
        return stem, "geometry", str(exc)
    maps = {a: maps[a] for a in affs}
    write_label_maps(out_dir, stem, maps)
    info["label_counts"] = {a: {"supports": int((m.labels == 1).sum()),
                                "not": int((m.labels == 0).sum()),
                                "unknown": int((m.labels == -1).sum())} for a, m in maps.items()}
    info["intrinsics"] = depth.intrinsics.as_dict()
    return stem, "ok", info


def cmd_labelgen(cfg: RunConfig) -> int:
    depth_dir = _require_dir(cfg.depth_dir, "depth")
    stems = _stems(depth_dir)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    lc = _label_config(cfg)
    jobs = [(depth_dir, s, lc, out, _affordances(cfg)) for s in stems]
    status = EXIT_OK
    for stem, state, payload in _map_jobs(_labelgen_one, jobs, cfg.jobs):
        if state == "ok":
            _write_json(out / f"{stem}.json", _provenance(cfg, input=f"{stem}.png", **payload))
            log.info("%s: labels written", stem)
        elif state == "geometry":
            log.error("%s: %s", stem, payload)
            status = max(status, EXIT_GEOMETRY) if status != EXIT_INPUT else status
        else:
            log.error("%s: unreadable input: %s", stem, payload)
            status = EXIT_INPUT
    return status


# -- training ------------------------------------------------------------------

def _mid_config(cfg: RunConfig) -> ml.MidlevelConfig:
    return ml.MidlevelConfig(window_cells=cfg.window_cells, cell=cfg.cell, k=cfg.k,
                             restarts=cfg.restarts, consistency=cfg.consistency,
                             cardinality=cfg.cardinality, max_elements=cfg.max_elements,
                             C=cfg.svm_c, rounds=cfg.rounds, samples_per_image=cfg.samples_per_image,
                             negatives_per_image=cfg.negatives_per_image,
                             min_coverage=cfg.min_coverage, score_floor=cfg.score_floor,
                             nms_radius=cfg.nms_radius,
                             colour_weight=cfg.colour_weight, seed=cfg.seed)


def cmd_train_midlevel(cfg: RunConfig) -> int:
    images = _require_dir(cfg.image_dir, "image")
    labels = _require_dir(cfg.label_dir, "label")
    affs = _affordances(cfg)
    stems, imgs, maps = _load_dataset(images, labels, affs)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    mc = _mid_config(cfg)
    rows = ["affordance,element,step,objective"]
    written, failed = {}, {}
    for a in affs:
        amaps = [m[a] for m in maps]
        if not any((m.labels == 1).any() for m in amaps):
            log.warning("%s: no SUPPORTS pixels in the training labels; skipped", a)
            continue
        try:
            bank = ml.train_elements(imgs, amaps, a, mc)
        except (NoQualifyingPatches, ClusterCollapsed, DegenerateFit) as exc:
            log.error("%s", exc)
            failed[a] = str(exc)
            continue
        path = out / f"midlevel_{a}.bank"
        ml.save_bank(path, bank)
        written[a] = {"file": path.name, "sha256": _sha256(path), "elements": len(bank)}
        for i, el in enumerate(bank.elements):
            rows += [f"{a},{i},{step},{val:.9g}" for step, val in el.history]
        log.info("%s: %d elements", a, len(bank))
    (out / "midlevel_log.csv").write_text("\n".join(rows) + "\n")
    _write_json(out / "midlevel.json", _provenance(cfg, images=stems, models=written, failed=failed))
    return EXIT_TRAINING if failed else EXIT_OK


def cmd_train_grid(cfg: RunConfig) -> int:
    images = _require_dir(cfg.image_dir, "image")
    labels = _require_dir(cfg.label_dir, "label")
    affs = _affordances(cfg)
    stems, imgs, maps = _load_dataset(images, labels, affs)
    trainable = []
    for a in affs:
        if any((m[a].labels == 1).any() for m in maps):
            trainable.append(a)
        else:
            log.warning("%s: no SUPPORTS pixels in the training labels; skipped", a)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    fc = gp.FeatureConfig(m=cfg.grid_m, n=cfg.grid_n)
    tc = gp.TrainConfig(cfg.learning_rate, cfg.momentum, cfg.batch_size, cfg.epochs, cfg.seed,
                        cfg.weight_decay)
    try:
        model = gp.train(gp.GridModel.zeros(trainable, fc), imgs, maps, tc)
    except (NonFiniteLoss, AffordanceError) as exc:
        log.error("grid training failed: %s", exc)
        return EXIT_TRAINING
    path = out / "grid.model"
    gp.save_model(path, model)
    (out / "grid_log.csv").write_text(gp.training_log_csv(model))
    _write_json(out / "grid.json", _provenance(cfg, images=stems, affordances=trainable,
                                               model={"file": path.name, "sha256": _sha256(path)}))
    return EXIT_OK


# -- predict -------------------------------------------------------------------

def _load_models(paths: Sequence[Path]):
    models = []
    for p in paths:
        try:
            head = p.read_bytes()[:8]
        except OSError as exc:
            raise InputError(f"cannot read model {p}: {exc}") from exc
        if head == ml.BANK_MAGIC:
            models.append(("midlevel", ml.load_bank(p)))
        elif head == gp.GRID_MODEL_MAGIC:
            models.append(("grid", gp.load_model(p)))
        else:
            raise InputError(f"{p} is neither an element bank nor a grid model")
    return models


def write_prediction_png(path: Path, scores: np.ndarray) -> None:
    q = np.rint(np.clip(scores, 0.0, 1.0) * 65535).astype("<u2")
    Image.fromarray(q).save(path, format="PNG")


def read_prediction_png(path: Path) -> np.ndarray:
    """Soft scores in [0, 1]; 16-bit files scale by 65535, 8-bit ones by 255."""
    with Image.open(path) as im:
        if im.mode.startswith("I"):
            return np.asarray(im, dtype=np.float64) / 65535.0
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def _predict_one(job):
    image_dir, stem, models, affs, out = job
    try:
        img = read_rgb(image_dir / f"{stem}.png")
    except OSError as exc:
        return stem, "input", str(exc)
    done = []
    for kind, model in models:
        if kind == "grid":
            maps = {a: m for a, m in gp.predict_all(model, img).items() if a in affs}
        elif model.affordance in affs:
            maps = {model.affordance: ml.infer(img, model)}
        else:
            maps = {}
        for a, m in maps.items():
            write_prediction_png(label_map_path(out, stem, a), m.scores)
            done.append(a)
    return stem, "ok", done


def cmd_predict(cfg: RunConfig) -> int:
    images = _require_dir(cfg.image_dir, "image")
    if not cfg.model:
        raise InputError("no --model given")
    models = _load_models(cfg.model)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    stems = _stems(images)
    jobs = [(images, s, models, set(_affordances(cfg)), out) for s in stems]
    status = EXIT_OK
    record = {}
    for stem, state, payload in _map_jobs(_predict_one, jobs, cfg.jobs):
        if state != "ok":
            log.error("%s: %s", stem, payload)
            status = EXIT_INPUT
            continue
        record[stem] = sorted(set(payload))
    _write_json(out / "predict.json", _provenance(cfg, models=[p.name for p in cfg.model],
                                                  outputs=record))
    return status


# -- eval ----------------------------------------------------------------------

def cmd_eval(cfg: RunConfig) -> int:
    pred_dir = _require_dir(cfg.pred_dir, "prediction")
    label_dir = _require_dir(cfg.label_dir, "label")
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    preds: Dict[str, List[np.ndarray]] = {}
    truths: Dict[str, List[AffordanceMap]] = {}
    for a in _affordances(cfg):
        for p in sorted(pred_dir.glob(f"*_{a}.png")):
            stem = p.stem[: -len(a) - 1]
            truth_path = label_map_path(label_dir, stem, a)
            if not truth_path.exists():
                raise InputError(f"no label map for prediction {p.name}")
            preds.setdefault(a, []).append(read_prediction_png(p))
            truths.setdefault(a, []).append(read_label_png(truth_path, a))
    if not preds:
        raise InputError(f"no predictions found in {pred_dir}")
    try:
        rows, curves = ev.evaluate(preds, truths,
                                   include_unknown_as_negative=cfg.include_unknown_as_negative)
    except DimensionMismatch as exc:
        log.error("%s", exc)
        return EXIT_EVAL
    (out / "report.csv").write_text(ev.report_csv(rows))
    for a, c in curves.items():
        (out / f"pr_{a}.csv").write_text(ev.curve_csv(c))
    if cfg.svg:
        ev.plot_curves_svg(curves, out / "pr_curves.svg", title="precision-recall")
    for r in rows:
        log.info("%s: AP %.4f (%d known, %d positive)", r.affordance, r.ap, r.n_known, r.n_positive)
    return EXIT_OK


# -- synth ---------------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> int:
    from . import synthetic as sy
    from .labeler import build_filter_bank

    out = cfg.out_dir
    scene_dir = out / "scenes"
    if cfg.scene_dir is not None:
        src = _require_dir(cfg.scene_dir, "scene")
        paths = sorted(src.glob("*.txt"))
        if not paths:
            raise InputError(f"no scene files in {src}")
    else:
        paths = sy.write_suite(scene_dir, cfg.n_scenes, cfg.seed)
    depth_dir, rgb_dir, label_dir = out / "depth", out / "rgb", out / "labels"
    for d in (depth_dir, rgb_dir, label_dir):
        d.mkdir(parents=True, exist_ok=True)
    specs = []
    for p in paths:
        try:
            spec = sy.load_scene(p)
        except (OSError, ValueError) as exc:
            raise InputError(f"{p}: {exc}") from exc
        r = sy.render(spec)
        write_depth_png(depth_dir / f"{p.stem}.png", r.depth)
        write_intrinsics(depth_dir / f"{p.stem}.intrinsics", spec.intrinsics)
        write_rgb(rgb_dir / f"{p.stem}.png", r.rgb)
        specs.append((p.stem, spec))
    lc = _label_config(cfg)
    status = EXIT_OK
    jobs = [(depth_dir, stem, lc, label_dir, _affordances(cfg)) for stem, _ in specs]
    rows = ["scene,affordance,compared,agree,agreement"]
    bank = build_filter_bank(lc.human, lc.voxel_size)
    for (stem, spec), (_, state, payload) in zip(specs, _map_jobs(_labelgen_one, jobs, cfg.jobs)):
        if state != "ok":
            log.error("%s: %s", stem, payload)
            status = EXIT_GEOMETRY
            continue
        _write_json(label_dir / f"{stem}.json", _provenance(cfg, input=f"{stem}.png", **payload))
        if cfg.oracle_stride == 0:
            continue
        oracle = sy.oracle_affordances(spec, bank, voxel_size=lc.voxel_size, thresholds=lc.thresholds,
                                       stride=cfg.oracle_stride)
        generated = read_label_maps(label_dir, stem)
        for a in _affordances(cfg):
            n, k = sy.agreement_counts(generated[a], oracle)
            rows.append(f"{stem},{a},{n},{k},{(k / n if n else float('nan')):.6f}")
    (out / "fidelity.csv").write_text("\n".join(rows) + "\n")
    return status


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="affordance", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, help_, opts):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", type=Path, help="TOML file of option values")
        sp.add_argument("--out-dir", dest="out_dir", type=Path, required=True)
        sp.add_argument("-v", "--verbose", action="store_true")
        _add_options(sp, opts + _COMMON)
        return sp

    sp = command("labelgen", "generate tri-state label maps from depth", _LABEL_OPTS)
    sp.add_argument("--depth-dir", dest="depth_dir", type=Path)
    sp = command("train-midlevel", "train mid-level elements", _MID_OPTS)
    sp.add_argument("--image-dir", dest="image_dir", type=Path)
    sp.add_argument("--label-dir", dest="label_dir", type=Path)
    sp = command("train-grid", "train the grid predictor", _GRID_OPTS)
    sp.add_argument("--image-dir", dest="image_dir", type=Path)
    sp.add_argument("--label-dir", dest="label_dir", type=Path)
    sp = command("predict", "predict soft affordance maps", [])
    sp.add_argument("--image-dir", dest="image_dir", type=Path)
    sp.add_argument("--model", type=Path, nargs="+")
    sp = command("eval", "average precision of predictions", [])
    sp.add_argument("--pred-dir", dest="pred_dir", type=Path)
    sp.add_argument("--label-dir", dest="label_dir", type=Path)
    sp.add_argument("--include-unknown-as-negative", action="store_true")
    sp.add_argument("--svg", action="store_true", help="also write pr_curves.svg")
    sp = command("synth", "generate, label and check the synthetic suite",
                 _LABEL_OPTS + [("n_scenes", int, 20, "scenes to generate", (1, 10 ** 5)),
                                ("oracle_stride", int, 4, "oracle pixel stride (0 skips the check)",
                                 (0, 64))])
    sp.add_argument("--scene-dir", dest="scene_dir", type=Path,
                    help="use existing scene files instead of generating")
    return p


_COMMANDS = {
    "labelgen": (cmd_labelgen, _LABEL_OPTS, ["depth_dir", "out_dir"]),
    "train-midlevel": (cmd_train_midlevel, _MID_OPTS, ["image_dir", "label_dir", "out_dir"]),
    "train-grid": (cmd_train_grid, _GRID_OPTS, ["image_dir", "label_dir", "out_dir"]),
    "predict": (cmd_predict, [], ["image_dir", "model", "out_dir"]),
    "eval": (cmd_eval, [], ["pred_dir", "label_dir", "out_dir"]),
    "synth": (cmd_synth, _LABEL_OPTS + [("n_scenes", int, 20, "", (1, 10 ** 5)),
                                        ("oracle_stride", int, 4, "", (0, 64))],
              ["scene_dir", "out_dir"]),
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    fn, opts, paths = _COMMANDS[args.command]
    try:
        cfg = resolve(args, opts + _COMMON, paths)
        extra = {k: getattr(args, k) for k in ("include_unknown_as_negative", "svg") if hasattr(args, k)}
        if extra:
            cfg = RunConfig(cfg.command, {**cfg.values, **extra})
        return fn(cfg)
    except InputError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except NoPositives as exc:
        log.error("%s", exc)
        return EXIT_EVAL


if __name__ == "__main__":
    sys.exit(main())
