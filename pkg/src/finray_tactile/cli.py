"""Command-line entry point wiring the full pipeline.

Commands: gen-data, train, eval, sweep, indenter-test, pick-place, render.
All are driven by an optional JSON config (strict schema: unknown keys are
rejected) plus a few overriding flags; every run writes a resolved config
echo into the output directory so results can be reproduced exactly.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure (diverged training).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import datagen, experiments
from .datagen import (
    ContactRanges,
    Dataset,
    DatasetFormatError,
    generate_dataset,
    read_dataset,
    write_dataset,
    write_sidecar,
)
from .learner import (
    ModelConfig,
    TrainConfig,
    TrainingDivergedError,
    build_model,
    evaluate,
    load_model,
    save_model,
    train,
    write_loss_csv,
)
from .learner.serialize import ModelFormatError
from .mechanics import FingerDesign, SmallAngleWarning
from .sensor import CameraConfig, write_pbm

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

SEED_ENV_VAR = "FINRAY_SIM_SEED"
DEFAULT_SEED = 7


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    sweep_n: int = 1500
    robustness_trials: int = 30
    alpha: float = 0.05
    pick_trials: int = 20
    pick_noise_finger_mm: float = 10.0
    pick_noise_closing_mm: float = 2.0
    grasp_depth_mm: float = 3.25
    grasp_location_from_tip_mm: float = 30.0

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class DatasetConfig:
    n: int = 4000
    split_ratio: float = 0.8

    def to_dict(self) -> dict:
        return {"n": self.n, "split_ratio": self.split_ratio}


@dataclass
class RunConfig:
    design: FingerDesign = field(default_factory=FingerDesign)
    camera: CameraConfig = field(default_factory=CameraConfig)
    ranges: ContactRanges = field(default_factory=ContactRanges)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    out_dir: str = "runs"
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "design": self.design.to_dict(),
            "camera": self.camera.to_dict(),
            "ranges": self.ranges.to_dict(),
            "train": self.train.to_dict(),
            "dataset": self.dataset.to_dict(),
            "experiment": self.experiment.to_dict(),
            "out_dir": self.out_dir,
            "seed": self.seed,
        }


def _build_block(cls, block: dict, path: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(
            f"unknown key(s) {sorted(unknown)} in config block '{path}'; "
            f"allowed: {sorted(allowed)}"
        )
    try:
        if hasattr(cls, "from_dict"):
            return cls.from_dict(block)
        return cls(**block)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config block '{path}': {exc}") from exc


def load_run_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    known = {"design", "camera", "ranges", "train", "dataset", "experiment", "out_dir", "seed"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level config key(s): {sorted(unknown)}")
    cfg = RunConfig()
    if "design" in raw:
        cfg.design = _build_block(FingerDesign, raw["design"], "design")
    if "camera" in raw:
        cfg.camera = _build_block(CameraConfig, raw["camera"], "camera")
    if "ranges" in raw:
        cfg.ranges = _build_block(ContactRanges, raw["ranges"], "ranges")
    if "train" in raw:
        cfg.train = _build_block(TrainConfig, raw["train"], "train")
    if "dataset" in raw:
        cfg.dataset = _build_block(DatasetConfig, raw["dataset"], "dataset")
    if "experiment" in raw:
        cfg.experiment = _build_block(ExperimentConfig, raw["experiment"], "experiment")
    if "out_dir" in raw:
        if not isinstance(raw["out_dir"], str):
            raise ConfigError("out_dir must be a string")
        cfg.out_dir = raw["out_dir"]
    if "seed" in raw:
        if not isinstance(raw["seed"], int):
            raise ConfigError("seed must be an integer")
        cfg.seed = raw["seed"]
    return cfg


def resolve_seed(args, cfg: RunConfig) -> int:
    if args.seed is not None:
        return args.seed
    if cfg.seed is not None:
        return cfg.seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from exc
    return DEFAULT_SEED


def apply_overrides(args, cfg: RunConfig) -> RunConfig:
    if getattr(args, "resolution", None) is not None:
        cfg.camera = CameraConfig(
            resolution_px=args.resolution,
            px_per_mm=cfg.camera.px_per_mm,
            optical_axis_mm=cfg.camera.optical_axis_mm,
            row_separation_mm=cfg.camera.row_separation_mm,
            marker_radius_px=cfg.camera.marker_radius_px,
            visibility_halfwidth_mm=cfg.camera.visibility_halfwidth_mm,
            reference_pin_length_mm=cfg.camera.reference_pin_length_mm,
        )
    if getattr(args, "out", None) is not None:
        cfg.out_dir = args.out
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_config_echo(out: Path, cfg: RunConfig, command: str, seed: int, extra=None):
    echo = {"command": command, "seed": seed, "config": cfg.to_dict()}
    if extra:
        echo.update(extra)
    with open(out / "config_echo.json", "w") as fh:
        json.dump(echo, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


# --------------------------------------------------------------------------
# command handlers


def cmd_gen_data(args) -> int:
    cfg = apply_overrides(args, load_run_config(args.config))
    seed = resolve_seed(args, cfg)
    n = args.n if args.n is not None else cfg.dataset.n
    out = _out_dir(cfg)
    ds = generate_dataset(
        cfg.design,
        cfg.camera,
        cfg.ranges,
        n=n,
        seed=seed,
        split_ratio=cfg.dataset.split_ratio,
        jobs=args.jobs,
    )
    path = out / "dataset.tfrd"
    write_dataset(ds, path)
    write_sidecar(ds, out / "dataset.json", cfg.design, cfg.camera)
    write_config_echo(out, cfg, "gen-data", seed, {"n": n})
    n_train = sum(1 for s in ds.samples if s.split == datagen.SPLIT_TRAIN)
    print(f"wrote {path} ({len(ds)} samples, {n_train} train / {len(ds) - n_train} val)")
    return EXIT_OK


def _model_config_for(dataset: Dataset, train_dtype: str = "float32") -> ModelConfig:
    r = dataset.ranges
    return ModelConfig(
        input_resolution=dataset.resolution_px,
        target_low=(r.depth_min_mm, r.location_from_tip_min_mm),
        target_high=(r.depth_max_mm, r.location_from_tip_max_mm),
        dtype=train_dtype,
    )


def cmd_train(args) -> int:
    cfg = apply_overrides(args, load_run_config(args.config))
    seed = resolve_seed(args, cfg)
    out = _out_dir(cfg)
    dataset_path = args.dataset or (out / "dataset.tfrd")
    ds = read_dataset(dataset_path)
    tc = cfg.train
    if args.epochs is not None:
        from dataclasses import replace

        tc = replace(tc, epochs=args.epochs)
    if tc.seed == 0:
        from dataclasses import replace

        tc = replace(tc, seed=experiments.derive_seed(seed, "train"))
    model = build_model(_model_config_for(ds), seed=experiments.derive_seed(seed, "init"))
    model.dataset_hash = ds.design_digest
    log = train(model, ds, tc)
    model_path = out / "model.tfrm"
    save_model(model, model_path)
    write_loss_csv(model.train_log, out / "loss.csv")
    write_config_echo(out, cfg, "train", seed, {"dataset": str(dataset_path)})
    res = evaluate(model, ds)
    print(
        f"wrote {model_path} ({len(log)} epochs): "
        f"val MAE depth {res.mae_depth_mm:.4f} mm, "
        f"location {res.mae_location_mm:.4f} mm"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = apply_overrides(args, load_run_config(args.config))
    seed = resolve_seed(args, cfg)
    out = _out_dir(cfg)
    ds = read_dataset(args.dataset or (out / "dataset.tfrd"))
    model = load_model(args.model or (out / "model.tfrm"))
    res = evaluate(model, ds)
    rows = [
        {
            "target_depth_mm": t[0],
            "target_location_mm": t[1],
            "pred_depth_mm": p[0],
            "pred_location_mm": p[1],
            "resid_depth_mm": r[0],
            "resid_location_mm": r[1],
        }
        for t, p, r in zip(res.targets, res.predictions, res.residuals)
    ]
    write_csv(
        out / "residuals.csv",
        rows,
        [
            "target_depth_mm",
            "target_location_mm",
            "pred_depth_mm",
            "pred_location_mm",
            "resid_depth_mm",
            "resid_location_mm",
        ],
    )
    with open(out / "eval.json", "w") as fh:
        json.dump(res.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_config_echo(out, cfg, "eval", seed)
    print(
        f"val MAE depth {res.mae_depth_mm:.4f} mm, location {res.mae_location_mm:.4f} mm "
        f"({len(res.residuals)} samples)"
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = apply_overrides(args, load_run_config(args.config))
    seed = resolve_seed(args, cfg)
    out = _out_dir(cfg)
    n = args.n if args.n is not None else cfg.experiment.sweep_n
    rows, evals = experiments.design_sweep(
        cfg.design, cfg.camera, cfg.ranges, n_per_variant=n,
        master_seed=seed, train_cfg=cfg.train,
    )
    write_csv(
        out / "sweep.csv",
        rows,
        ["variant", "long_pin_mm", "base_pins", "hinge", "n", "seed",
         "mae_depth_mm", "mae_location_mm", "error"],
    )
    for label, res in evals.items():
        scatter = [
            {
                "target_depth_mm": t[0],
                "target_location_mm": t[1],
                "pred_depth_mm": p[0],
                "pred_location_mm": p[1],
            }
            for t, p in zip(res.targets, res.predictions)
        ]
        write_csv(
            out / f"sweep_residuals_{label}.csv",
            scatter,
            ["target_depth_mm", "target_location_mm", "pred_depth_mm", "pred_location_mm"],
        )
    write_config_echo(out, cfg, "sweep", seed, {"n_per_variant": n})
    failures = [r for r in rows if r["error"]]
    for r in rows:
        status = r["error"] or (
            f"depth {r['mae_depth_mm']:.4f} mm, location {r['mae_location_mm']:.4f} mm"
        )
        print(f"{r['variant']}: {status}")
    if len(failures) == len(rows):
        print("all sweep variants failed", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_indenter_test(args) -> int:
    cfg = apply_overrides(args, load_run_config(args.config))
    seed = resolve_seed(args, cfg)
    out = _out_dir(cfg)
    model = load_model(args.model or (out / "model.tfrm"))
    report = experiments.indenter_robustness(
        model, cfg.design, cfg.camera, master_seed=seed,
        trials=cfg.experiment.robustness_trials, alpha=cfg.experiment.alpha,
    )
    write_csv(
        out / "indenter_stats.csv",
        report.stats,
        ["indenter", "trials", "depth_err_mean_mm", "depth_err_sd_mm",
         "location_err_mean_mm", "location_err_sd_mm"],
    )
    hsd_cols = ["group_i", "group_j", "mean_i", "mean_j", "q", "q_crit",
                "alpha", "significant", "degenerate"]
    write_csv(out / "hsd_depth.csv", report.hsd_depth, hsd_cols)
    write_csv(out / "hsd_location.csv", report.hsd_location, hsd_cols)
    write_config_echo(out, cfg, "indenter-test", seed)
    sig_d = sum(1 for r in report.hsd_depth if r["significant"])
    sig_l = sum(1 for r in report.hsd_location if r["significant"])
    for row in report.stats:
        print(
            f"{row['indenter']}: depth {row['depth_err_mean_mm']:.3f}"
            f"±{row['depth_err_sd_mm']:.3f} mm, "
            f"location {row['location_err_mean_mm']:.3f}"
            f"±{row['location_err_sd_mm']:.3f} mm"
        )
    print(f"HSD significant pairs: depth {sig_d}, location {sig_l} "
          f"(alpha={cfg.experiment.alpha})")
    return EXIT_OK


def cmd_pick_place(args) -> int:
    cfg = apply_overrides(args, load_run_config(args.config))
    seed = resolve_seed(args, cfg)
    out = _out_dir(cfg)
    model = None if args.perfect else load_model(args.model or (out / "model.tfrm"))
    noise = experiments.PickNoise(
        finger_axis_mm=cfg.experiment.pick_noise_finger_mm,
        closing_axis_mm=cfg.experiment.pick_noise_closing_mm,
    )
    by_cond = experiments.pick_place_all_conditions(
        model, cfg.design, cfg.camera, master_seed=seed,
        trials=cfg.experiment.pick_trials, noise=noise,
        grasp_depth_mm=cfg.experiment.grasp_depth_mm,
        grasp_location_from_tip_mm=cfg.experiment.grasp_location_from_tip_mm,
    )
    trial_rows = []
    for cond, trials in by_cond.items():
        for i, t in enumerate(trials):
            trial_rows.append(
                {
                    "condition": cond,
                    "trial": i,
                    "true_finger_mm": t.true_finger_mm,
                    "true_closing_mm": t.true_closing_mm,
                    "predicted_finger_mm": t.predicted_finger_mm,
                    "predicted_closing_mm": t.predicted_closing_mm,
                    "error_mm": t.error_mm,
                }
            )
    write_csv(
        out / "pick_place_trials.csv",
        trial_rows,
        ["condition", "trial", "true_finger_mm", "true_closing_mm",
         "predicted_finger_mm", "predicted_closing_mm", "error_mm"],
    )
    summary = experiments.placement_summary(by_cond)
    write_csv(
        out / "pick_place_summary.csv",
        summary,
        ["condition", "trials", "mean_error_mm", "sd_error_mm", "max_error_mm"],
    )
    write_config_echo(out, cfg, "pick-place", seed, {"perfect": bool(args.perfect)})
    for row in summary:
        print(f"{row['condition']}: mean error {row['mean_error_mm']:.3f} mm "
              f"(sd {row['sd_error_mm']:.3f}, n={row['trials']})")
    return EXIT_OK


def cmd_render(args) -> int:
    cfg = apply_overrides(args, load_run_config(args.config))
    seed = resolve_seed(args, cfg)
    out = _out_dir(cfg)
    if not cfg.ranges.contains(args.depth, args.location):
        print(
            f"warning: contact (d={args.depth} mm, loc={args.location} mm from tip) is "
            f"outside the configured ranges; rendering an extrapolated frame",
            file=sys.stderr,
        )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SmallAngleWarning)
        sample = datagen.synth_sample(
            cfg.design, cfg.camera, args.depth, args.location, ranges=cfg.ranges, seed=seed
        )
    path = Path(args.frame_out) if args.frame_out else out / (
        f"frame_d{args.depth:g}_loc{args.location:g}.pbm"
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    write_pbm(sample.frame, path)
    print(f"wrote {path} ({sample.frame.n_set} set pixels"
          + (", extrapolated" if sample.extrapolated else "") + ")")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="finray-sim",
        description="Hinged Fin-Ray tactile finger simulator and learning pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help=f"master seed (fallback ${SEED_ENV_VAR})")
        p.add_argument("--out", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.add_argument("--resolution", type=int, choices=(64, 128),
                       help="camera resolution override")

    p = sub.add_parser("gen-data", help="synthesize a labelled dataset (TFRD + JSON sidecar)")
    common(p)
    p.add_argument("--n", type=int, help="number of samples (default from config)")
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", help="train the regressor on a TFRD dataset")
    common(p)
    p.add_argument("--dataset", help="dataset path (default <out>/dataset.tfrd)")
    p.add_argument("--epochs", type=int, help="override the configured epoch count")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on a dataset's validation split")
    common(p)
    p.add_argument("--dataset", help="dataset path (default <out>/dataset.tfrd)")
    p.add_argument("--model", help="model path (default <out>/model.tfrm)")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("sweep", help="full-factorial design sweep (8 variants)")
    common(p)
    p.add_argument("--n", type=int, help="samples per variant (default from config)")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("indenter-test", help="indenter robustness study with Tukey HSD")
    common(p)
    p.add_argument("--model", help="model path (default <out>/model.tfrm)")
    p.set_defaults(handler=cmd_indenter_test)

    p = sub.add_parser("pick-place", help="pick-and-place correction under four conditions")
    common(p)
    p.add_argument("--model", help="model path (default <out>/model.tfrm)")
    p.add_argument("--perfect", action="store_true", help="perfect-sensing mode (no model)")
    p.set_defaults(handler=cmd_pick_place)

    p = sub.add_parser("render", help="render one contact's binarized frame to PBM")
    common(p)
    p.add_argument("--depth", type=float, required=True, help="indentation depth (mm)")
    p.add_argument("--location", type=float, required=True,
                   help="contact location from the fingertip (mm)")
    p.add_argument("--frame-out", help="output image path (default in --out)")
    p.set_defaults(handler=cmd_render)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetFormatError, ModelFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
