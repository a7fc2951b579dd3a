"""Command-line driver: ``metacal <command> [options]``.

Scenes, bases and models are JSON documents; anything tabular is CSV with a
header row and floats written to 9 significant digits.  Exit status is 0 on
success, 1 for invalid input and 2 for file-system errors.  Diagnostics go to
stderr; stdout carries only machine-readable output.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import experiments as ex
from .curves import DEFAULT_COMPONENTS, DEFAULT_GRID, PcaCurveBasis, grid, project_curve
from .errors import DomainError, TrainingDivergedError, ValidationError
from .meta import (
    FeatureConfig,
    MetaCalibratorModel,
    TrainingConfig,
    extract_baseline_features,
    load_feature_file,
    load_model,
    predict_calibration_map,
    save_model,
    train_meta_calibrator,
)
from .planning import CandidateView, gamma_grid, information_gain_curve, select_next_view
from .recalibration import IsotonicMap, apply_maps
from .scenes import FAMILIES, corpus_configs, generate_scene, load_scene, render_scene_outputs, save_scene, scene_levels

MANIFEST = "manifest.json"
MODES = ("oracle", "meta", "identity")
CHANNEL_NAMES = ("R", "G", "B")


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; route them to validation errors instead
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunConfig:
    """Resolved command invocation; paths are checked before any computation starts."""

    command: str
    inputs: dict[str, Path] = field(default_factory=dict)
    outputs: dict[str, Path] = field(default_factory=dict)
    seed: int | None = None

    def validate(self, needs_seed: bool = False) -> None:
        if needs_seed and self.seed is None:
            raise ValidationError(f"{self.command}: --seed is required")
        for name, path in self.inputs.items():
            if not path.exists():
                raise FileNotFoundError(f"{self.command}: {name} not found: {path}")
        for path in self.outputs.values():
            parent = path if path.suffix == "" else path.parent
            parent.mkdir(parents=True, exist_ok=True)


# ---------------------------------------------------------------- I/O helpers


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def _write_csv(path: Path | None, header, rows) -> None:
    """Write rows to ``path``, or to stdout when ``path`` is None."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    if path is None:
        sys.stdout.write(buf.getvalue())
    else:
        path.write_text(buf.getvalue())


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc


def load_manifest(corpus: Path) -> dict:
    path = corpus / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no {MANIFEST} in {corpus}")
    man = _read_json(path)
    for key in ("train", "test"):
        if key not in man:
            raise ValidationError(f"{path}: missing '{key}' entry")
    return man


def load_split(corpus: Path, split: str):
    """``[(scene_id, SyntheticScene), ...]`` for one split, in manifest order."""
    man = load_manifest(corpus)
    return [(e["id"], load_scene(corpus / e["file"])) for e in man[split]]


def _load_basis(path: Path) -> PcaCurveBasis:
    try:
        return PcaCurveBasis.from_dict(_read_json(path))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed basis ({exc})") from exc


def _load_model(path: Path) -> MetaCalibratorModel:
    try:
        return load_model(path)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed model ({exc})") from exc


# ---------------------------------------------------------------- commands


def cmd_gen_corpus(args) -> int:
    cfg = RunConfig("gen-corpus", outputs={"out": Path(args.out)}, seed=args.seed)
    cfg.validate(needs_seed=True)
    train, test = corpus_configs(
        args.train, args.test, args.seed, family=args.family, height=args.height, width=args.width, base_scale=args.base_scale
    )
    out = cfg.outputs["out"]
    manifest = {
        "format": "metacal.corpus/1",
        "seed": args.seed,
        "parameters": {
            "n_train": args.train,
            "n_test": args.test,
            "family": args.family,
            "height": args.height,
            "width": args.width,
            "base_scale": args.base_scale,
            "k_range": [0.3, 3.0],
        },
        "train": [],
        "test": [],
    }
    for split, configs in (("train", train), ("test", test)):
        for i, c in enumerate(configs):
            sid = f"{split}_{i:03d}"
            save_scene(generate_scene(c), out / f"{sid}.json")
            manifest[split].append({"id": sid, "file": f"{sid}.json", "seed": c.seed, "k": c.k})
    _write_json(out / MANIFEST, manifest)
    print(f"wrote {len(train) + len(test)} scenes to {out}", file=sys.stderr)
    return 0


def _empirical_curve(levels: np.ndarray, p: np.ndarray) -> np.ndarray:
    return np.searchsorted(np.sort(levels), p, side="right") / len(levels)


def cmd_eval(args) -> int:
    modes = args.mode or (["oracle", "identity"] + (["meta"] if args.model else []))
    inputs = {"corpus": Path(args.corpus)}
    if "meta" in modes:
        if not args.model:
            raise ValidationError("eval: meta mode needs --model")
        inputs["model"] = Path(args.model)
    cfg = RunConfig("eval", inputs=inputs, outputs={"out": Path(args.out)})
    cfg.validate()
    model = _load_model(cfg.inputs["model"]) if "meta" in modes else None
    out = cfg.outputs["out"]
    curve_dir = out / "curves"
    curve_dir.mkdir(exist_ok=True)
    p = grid(args.grid)

    rows = []
    for sid, scene in sorted(load_split(cfg.inputs["corpus"], "test"), key=lambda t: t[0]):
        for mode in modes:
            if mode == "oracle":
                maps = ex.oracle_maps(scene, m=args.grid)
            elif mode == "meta":
                maps = predict_calibration_map(model, *render_scene_outputs(scene))
            else:
                maps = IsotonicMap.identity()
            metrics = ex.evaluate_maps(scene, maps)
            levels = scene_levels(scene)
            cal = apply_maps(maps, levels)
            for c, name in enumerate(CHANNEL_NAMES):
                rows.append(
                    (sid, name, metrics.cal_err_uncal[c], metrics.cal_err_cal[c], metrics.nll_uncal[c], metrics.nll_cal[c], mode)
                )
                _write_csv(
                    curve_dir / f"{sid}_{name}_{mode}.csv",
                    ("p", "p_hat_uncalibrated", "p_hat_calibrated"),
                    zip(p, _empirical_curve(levels[:, c], p), _empirical_curve(cal[:, c], p)),
                )
    _write_csv(
        out / "metrics.csv", ("scene", "channel", "cal_err_uncal", "cal_err_cal", "nll_uncal", "nll_cal", "mode"), rows
    )
    print(f"evaluated {len(rows) // (3 * len(modes))} scenes in modes {', '.join(modes)}", file=sys.stderr)
    return 0


def cmd_bench_iqr(args) -> int:
    if args.reps < 1000:
        raise ValidationError("bench-iqr: --reps must be at least 1000")
    if args.samples < 2:
        raise ValidationError("bench-iqr: --samples must be at least 2")
    cfg = RunConfig("bench-iqr", outputs={"out": Path(args.out)} if args.out else {}, seed=args.seed)
    cfg.validate(needs_seed=True)
    times = ex.bench_iqr(args.reps, args.sampling_reps, args.samples, args.seed)
    base = times["iqr_interpolation"]
    rows = [(name, t, t / base) for name, t in times.items()]
    _write_csv(cfg.outputs.get("out"), ("method", "seconds_per_pixel", "ratio_to_iqr"), rows)
    return 0


def cmd_fit_basis(args) -> int:
    cfg = RunConfig("fit-basis", inputs={"corpus": Path(args.corpus)}, outputs={"out": Path(args.out)})
    cfg.validate()
    scenes = [s for _, s in load_split(cfg.inputs["corpus"], "train")][: args.curves]
    if len(scenes) <= args.components:
        raise ValidationError(f"fit-basis: need more than {args.components} training scenes, found {len(scenes)}")
    basis = ex.fit_basis_from_scenes(scenes, args.components, args.grid)
    _write_json(cfg.outputs["out"], basis.to_dict())
    ratios = ", ".join(f"{r:.4f}" for r in basis.explained_variance_ratio)
    print(f"fitted {basis.n_components} components on {len(scenes)} curves; explained variance {ratios}", file=sys.stderr)
    return 0


def _training_features(features_path: Path | None, scenes, config: FeatureConfig) -> np.ndarray:
    if features_path is None:
        return np.array([ex.scene_feature_vector(s, config) for s in scenes])
    X = load_feature_file(features_path, config.dim)
    if len(X) != len(scenes):
        raise ValidationError(f"{features_path}: {len(X)} feature rows for {len(scenes)} scenes")
    return X


def cmd_train_meta(args) -> int:
    inputs = {"corpus": Path(args.corpus), "basis": Path(args.basis)}
    if args.features:
        inputs["features"] = Path(args.features)
    outputs = {"out": Path(args.out)}
    if args.loss_trace:
        outputs["loss_trace"] = Path(args.loss_trace)
    cfg = RunConfig("train-meta", inputs=inputs, outputs=outputs, seed=args.seed)
    cfg.validate(needs_seed=True)
    basis = _load_basis(cfg.inputs["basis"])
    scenes = [s for _, s in load_split(cfg.inputs["corpus"], "train")]
    features = FeatureConfig()
    X = _training_features(cfg.inputs.get("features"), scenes, features)
    targets = [project_curve(basis, ex.scene_curve(s, basis.m_grid)) for s in scenes]
    hyper = TrainingConfig(seed=args.seed, lr=args.lr, epochs=args.epochs, batch=args.batch)
    model, losses = train_meta_calibrator(zip(X, targets), basis, hyper, features)
    save_model(model, cfg.outputs["out"])
    if "loss_trace" in cfg.outputs:
        _write_csv(cfg.outputs["loss_trace"], ("epoch", "loss"), ((i + 1, v) for i, v in enumerate(losses)))
    print(f"trained on {len(scenes)} scenes; loss {losses[0]:.3g} -> {losses[-1]:.3g}", file=sys.stderr)
    return 0


def cmd_predict(args) -> int:
    inputs = {"model": Path(args.model), "scene": Path(args.scene)}
    if args.features:
        inputs["features"] = Path(args.features)
    cfg = RunConfig("predict", inputs=inputs, outputs={"out": Path(args.out)})
    cfg.validate()
    model = _load_model(cfg.inputs["model"])
    if "features" in cfg.inputs:
        feat = load_feature_file(cfg.inputs["features"], model.features.dim)
        if len(feat) != 1:
            raise ValidationError("predict: the feature file must hold exactly one row")
        cal_map = model.map_from_features(feat[0])
    else:
        scene = load_scene(cfg.inputs["scene"])
        image, umap = render_scene_outputs(scene)
        cal_map = model.map_from_features(extract_baseline_features(image, umap, model.features))
    _write_json(cfg.outputs["out"], {"format": "metacal.calibration-map/1", **cal_map.to_dict()})
    return 0


def cmd_plan(args) -> int:
    inputs = {"corpus": Path(args.corpus)}
    if args.model:
        inputs["model"] = Path(args.model)
    outputs = {"out": Path(args.out)}
    if args.log:
        outputs["log"] = Path(args.log)
    cfg = RunConfig("plan", inputs=inputs, outputs=outputs)
    cfg.validate()
    model = _load_model(cfg.inputs["model"]) if "model" in cfg.inputs else None
    gammas = gamma_grid(args.gammas)
    scenes = sorted(load_split(cfg.inputs["corpus"], args.split), key=lambda t: t[0])
    if not scenes:
        raise ValidationError(f"plan: no scenes in the '{args.split}' split")
    rows, candidates = [], []
    for idx, (sid, scene) in enumerate(scenes):
        pred, u_uncal = render_scene_outputs(scene)
        if model is None:
            maps = ex.oracle_maps(scene)
        else:
            maps = predict_calibration_map(model, pred, u_uncal)
        _, u_cal = render_scene_outputs(scene, maps)
        uncal = information_gain_curve(pred, scene.truth, u_uncal, gammas)
        cal = information_gain_curve(pred, scene.truth, u_cal, gammas)
        rows.extend((sid, g, a, b) for (g, a), (_, b) in zip(uncal, cal))
        candidates.append(CandidateView(idx, pred, scene.truth, u_cal))
    _write_csv(cfg.outputs["out"], ("scene", "gamma", "psnr_uncalibrated", "psnr_calibrated"), rows)
    chosen = select_next_view(candidates)
    log_rows = [(sid, float(np.mean(c.umap)), int(c.id == chosen)) for (sid, _), c in zip(scenes, candidates)]
    _write_csv(cfg.outputs.get("log"), ("view", "mean_calibrated_uncertainty", "selected"), log_rows)
    print(f"selected view {scenes[chosen][0]}", file=sys.stderr)
    return 0


def cmd_demo_train_overfit(args) -> int:
    cfg = RunConfig("demo-train-overfit", outputs={"out": Path(args.out)} if args.out else {}, seed=args.seed)
    cfg.validate(needs_seed=True)
    if not 0.0 <= args.memorisation <= 1.0:
        raise ValidationError("demo-train-overfit: --memorisation must lie in [0, 1]")
    rows = ex.train_overfit_demo(args.k, args.seed, args.memorisation, args.height, args.width)
    _write_csv(
        cfg.outputs.get("out"),
        ("scene", "k", "cal_err_identity", "cal_err_train_fit", "train_fit_worse"),
        ((r["scene"], r["k"], r["cal_err_identity"], r["cal_err_train_fit"], int(r["cal_err_train_fit"] > r["cal_err_identity"])) for r in rows),
    )
    return 0


# ---------------------------------------------------------------- parser


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _count(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="metacal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-corpus", help="write a seeded corpus of synthetic scenes")
    p.add_argument("--train", type=_positive_int, required=True)
    p.add_argument("--test", type=_count, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--family", choices=FAMILIES, default="scale")
    p.add_argument("--height", type=_positive_int, default=64)
    p.add_argument("--width", type=_positive_int, default=64)
    p.add_argument("--base-scale", type=float, default=0.1)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("eval", help="calibration error and NLL per test scene and channel")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model")
    p.add_argument("--mode", action="append", choices=MODES, help="repeatable; default oracle+identity (+meta with --model)")
    p.add_argument("--grid", type=_positive_int, default=DEFAULT_GRID)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-iqr", help="time calibrated IQR against sampled and integrated variance")
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--sampling-reps", type=_positive_int, help="repetitions for the two variance methods (default --reps)")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench_iqr)

    p = sub.add_parser("fit-basis", help="PCA basis from training-scene calibration curves")
    p.add_argument("--corpus", required=True)
    p.add_argument("--components", type=_positive_int, default=DEFAULT_COMPONENTS)
    p.add_argument("--curves", type=_positive_int, default=ex.BASIS_SCENES)
    p.add_argument("--grid", type=_positive_int, default=DEFAULT_GRID)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_basis)

    p = sub.add_parser("train-meta", help="train the curve-coefficient regressor")
    p.add_argument("--corpus", required=True)
    p.add_argument("--basis", required=True)
    p.add_argument("--features", help="CSV of precomputed feature vectors, one row per training scene")
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=_positive_int, default=2000)
    p.add_argument("--batch", type=_positive_int)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-trace")
    p.set_defaults(func=cmd_train_meta)

    p = sub.add_parser("predict", help="predict a scene's calibration map")
    p.add_argument("--model", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--features", help="use this single-row feature file instead of the scene's renders")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("plan", help="information gain per scene and next-view choice")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--model", help="meta-calibrator; default uses each scene's own fitted maps")
    p.add_argument("--gammas", type=_positive_int, default=11)
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("demo-train-overfit", help="maps fitted on training pixels versus identity on test pixels")
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=float, nargs="+", default=[0.5, 2.0, 3.0])
    p.add_argument("--memorisation", type=float, default=0.8)
    p.add_argument("--height", type=_positive_int, default=64)
    p.add_argument("--width", type=_positive_int, default=64)
    p.add_argument("--out")
    p.set_defaults(func=cmd_demo_train_overfit)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (ValidationError, DomainError, TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
