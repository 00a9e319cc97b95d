"""The three studies: design sweep, indenter robustness with Tukey's HSD,
and the sensing-corrected pick-and-place simulation.

Every experiment owns its RNG stream (seeds derived by hashing the master
seed with a stable label), so running variants or trials concurrently can
never change results.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.stats import studentized_range

from .datagen import (
    ContactRanges,
    INDENTER_REGISTRY,
    IndenterShape,
    TRAIN_INDENTER_ID,
    generate_dataset,
    indenter_id,
    synth_sample,
)
from .learner import TrainConfig, build_model, evaluate, train
from .learner.model import ModelConfig
from .mechanics import FingerDesign, HingeOrientation, beam_state
from .sensor import CameraConfig, project_markers


def derive_seed(master_seed: int, label: str) -> int:
    """Stable 63-bit stream seed for a named sub-experiment."""
    digest = hashlib.sha256(f"{master_seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


# --------------------------------------------------------------------------
# design sweep


@dataclass(frozen=True)
class SweepVariant:
    long_pin_mm: float
    base_pins: bool
    hinge: HingeOrientation

    @property
    def label(self) -> str:
        pins = "base" if self.base_pins else "nobase"
        return f"pin{self.long_pin_mm:g}_{pins}_{self.hinge.value}"

    def apply(self, design: FingerDesign) -> FingerDesign:
        return design.replace(
            long_pin_length_mm=self.long_pin_mm,
            base_pins_present=self.base_pins,
            hinge_orientation=self.hinge,
        )


def full_factorial() -> list[SweepVariant]:
    """All 8 combinations of pin length x base pins x hinge orientation."""
    return [
        SweepVariant(pin, base, hinge)
        for pin in (3.0, 5.5)
        for base in (True, False)
        for hinge in (HingeOrientation.OPPOSING, HingeOrientation.CONCORDANT)
    ]


def design_sweep(
    base_design: FingerDesign,
    camera: CameraConfig,
    ranges: ContactRanges,
    n_per_variant: int,
    master_seed: int,
    train_cfg: TrainConfig | None = None,
    variants: list[SweepVariant] | None = None,
    split_ratio: float = 0.8,
):
    """Generate, train and evaluate one dataset per variant.

    The contact-sampling seed is the master seed for every variant (paired
    comparison on identical contacts); model init and shuffling use
    per-variant derived streams. Per-variant failures are recorded in the
    row instead of aborting the sweep. Returns (rows, {label: EvalResult}).
    """
    variants = full_factorial() if variants is None else variants
    train_cfg = train_cfg or TrainConfig()
    rows = []
    evals = {}
    for var in variants:
        row = {
            "variant": var.label,
            "long_pin_mm": var.long_pin_mm,
            "base_pins": var.base_pins,
            "hinge": var.hinge.value,
            "n": n_per_variant,
            "seed": master_seed,
            "mae_depth_mm": float("nan"),
            "mae_location_mm": float("nan"),
            "error": "",
        }
        try:
            design = var.apply(base_design)
            ds = generate_dataset(
                design, camera, ranges, n_per_variant, master_seed,
                split_ratio=split_ratio,
            )
            cfg = ModelConfig(
                input_resolution=camera.resolution_px,
                target_low=(ranges.depth_min_mm, ranges.location_from_tip_min_mm),
                target_high=(ranges.depth_max_mm, ranges.location_from_tip_max_mm),
            )
            model = build_model(cfg, seed=derive_seed(master_seed, f"init:{var.label}"))
            tc = replace(train_cfg, seed=derive_seed(master_seed, f"shuffle:{var.label}"))
            train(model, ds, tc)
            res = evaluate(model, ds)
            row["mae_depth_mm"] = res.mae_depth_mm
            row["mae_location_mm"] = res.mae_location_mm
            evals[var.label] = res
        except Exception as exc:  # keep sweeping; the report carries the failure
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows, evals


def pin_length_displacements(
    design_long: FingerDesign,
    design_short: FingerDesign,
    state,
    camera: CameraConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-marker image displacement magnitudes for the same beam state under
    two pin lengths (the geometric-amplification mechanism of the sweep)."""
    out = []
    for design in (design_long, design_short):
        rest = beam_state(design, 0.0, 0.0)
        p0 = project_markers(design, rest, camera)
        p1 = project_markers(design, state, camera)
        out.append(np.hypot(p1.u_px - p0.u_px, p1.v_px - p0.v_px))
    return out[0], out[1]


# --------------------------------------------------------------------------
# Tukey's HSD


def tukey_hsd(groups: list[np.ndarray], alpha: float = 0.05) -> list[dict]:
    """All-pairs comparison via the studentized range statistic.

    q = |mean_i - mean_j| / sqrt((MSE/2) * (1/n_i + 1/n_j)) with MSE the
    pooled within-group variance on N - k degrees of freedom; critical
    values come from the studentized range quantile (numerical integration
    inside scipy, no lookup tables). A zero-variance pool is reported as
    degenerate rather than as an infinite statistic.
    """
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    groups = [np.asarray(g, dtype=float) for g in groups]
    if any(len(g) < 2 for g in groups):
        raise ValueError("every group needs at least two observations")
    k = len(groups)
    n_total = sum(len(g) for g in groups)
    df = n_total - k
    means = [float(g.mean()) for g in groups]
    sse = sum(float(((g - g.mean()) ** 2).sum()) for g in groups)
    mse = sse / df
    degenerate = mse == 0.0
    q_crit = float(studentized_range.ppf(1.0 - alpha, k, df)) if not degenerate else float("nan")
    rows = []
    for i in range(k):
        for j in range(i + 1, k):
            diff = abs(means[i] - means[j])
            if degenerate:
                q = float("nan")
                significant = diff > 0.0
            else:
                se = np.sqrt((mse / 2.0) * (1.0 / len(groups[i]) + 1.0 / len(groups[j])))
                q = float(diff / se)
                significant = q > q_crit
            rows.append(
                {
                    "group_i": i,
                    "group_j": j,
                    "mean_i": means[i],
                    "mean_j": means[j],
                    "q": q,
                    "q_crit": q_crit,
                    "alpha": alpha,
                    "significant": bool(significant),
                    "degenerate": degenerate,
                }
            )
    return rows


def studentized_range_quantile(alpha: float, k: int, df: int) -> float:
    """Upper-alpha quantile q(k, df) of the studentized range distribution."""
    return float(studentized_range.ppf(1.0 - alpha, k, df))


# --------------------------------------------------------------------------
# indenter robustness


@dataclass
class RobustnessReport:
    indenters: list[IndenterShape]
    trials: int
    alpha: float
    stats: list[dict]  # per indenter: mean/sd of |depth error| and |location error|
    hsd_depth: list[dict]
    hsd_location: list[dict]
    depth_errors: list[np.ndarray]
    location_errors: list[np.ndarray]


def indenter_robustness(
    model,
    design: FingerDesign,
    camera: CameraConfig,
    master_seed: int,
    indenters: list[IndenterShape] | None = None,
    trials: int = 30,
    depth_range_mm: tuple[float, float] = (1.0, 5.0),
    location_from_tip_range_mm: tuple[float, float] = (5.0, 55.0),
    alpha: float = 0.05,
) -> RobustnessReport:
    """Test a trained model against every indenter shape.

    Contact positions are randomized on a 1 mm grid over the given ranges
    (which deliberately extend past the training ranges). Errors are
    absolute deviations from the commanded ground truth; per-indenter Tukey
    HSD tables are computed for depth and location errors.
    """
    indenters = list(INDENTER_REGISTRY) if indenters is None else indenters
    stats: list[dict] = []
    depth_errs: list[np.ndarray] = []
    loc_errs: list[np.ndarray] = []
    for shape in indenters:
        ind = indenter_id(shape)
        rng = np.random.default_rng(derive_seed(master_seed, f"indenter:{shape.label}"))
        depths = rng.integers(
            int(depth_range_mm[0]), int(depth_range_mm[1]) + 1, size=trials
        ).astype(float)
        locs = rng.integers(
            int(location_from_tip_range_mm[0]),
            int(location_from_tip_range_mm[1]) + 1,
            size=trials,
        ).astype(float)
        frames = []
        for d, t in zip(depths, locs):
            s = synth_sample(design, camera, d, t, indenter=ind)
            frames.append(s.frame.to_array())
        preds = np.asarray(model.forward(np.stack(frames)))
        de = np.abs(preds[:, 0] - depths)
        le = np.abs(preds[:, 1] - locs)
        depth_errs.append(de)
        loc_errs.append(le)
        stats.append(
            {
                "indenter": shape.label,
                "trials": trials,
                "depth_err_mean_mm": float(de.mean()),
                "depth_err_sd_mm": float(de.std(ddof=1)),
                "location_err_mean_mm": float(le.mean()),
                "location_err_sd_mm": float(le.std(ddof=1)),
            }
        )
    return RobustnessReport(
        indenters=indenters,
        trials=trials,
        alpha=alpha,
        stats=stats,
        hsd_depth=tukey_hsd(depth_errs, alpha),
        hsd_location=tukey_hsd(loc_errs, alpha),
        depth_errors=depth_errs,
        location_errors=loc_errs,
    )


# --------------------------------------------------------------------------
# pick and place


class SensingCondition(str, Enum):
    NO_SENSING = "no_sensing"
    DEPTH_ONLY = "depth_only"
    LOCATION_ONLY = "location_only"
    BOTH = "both"


@dataclass(frozen=True)
class PickNoise:
    """Uniform pick-offset rectangle around the nominal grasp point."""

    finger_axis_mm: float = 10.0  # along the finger: shifts contact location
    closing_axis_mm: float = 2.0  # along gripper closing: shifts indentation depth


@dataclass(frozen=True)
class PlacementTrial:
    condition: str
    true_finger_mm: float
    true_closing_mm: float
    predicted_finger_mm: float
    predicted_closing_mm: float

    @property
    def error_mm(self) -> float:
        return float(
            np.hypot(
                self.true_finger_mm - self.predicted_finger_mm,
                self.true_closing_mm - self.predicted_closing_mm,
            )
        )


def pick_place_sim(
    model,
    design: FingerDesign,
    camera: CameraConfig,
    condition: SensingCondition,
    master_seed: int,
    trials: int = 20,
    noise: PickNoise = PickNoise(),
    grasp_depth_mm: float = 3.25,
    grasp_location_from_tip_mm: float = 30.0,
    object_indenter: IndenterShape = IndenterShape("circular", 30.0),
) -> list[PlacementTrial]:
    """Simulate one sensing condition of the pick-and-place task.

    Per trial: draw the true cylinder offset, synthesize the grasp frame,
    predict (depth, location), map depth to the closing-axis offset and
    location to the finger-axis offset, zero out whatever the condition
    disables, and score the Euclidean placement residual. ``model=None``
    is perfect sensing (predictions equal the commanded contact).

    The offset draws depend only on the seed, so conditions are paired.
    """
    rng = np.random.default_rng(derive_seed(master_seed, "pick_offsets"))
    offsets = rng.uniform(
        low=(-noise.finger_axis_mm, -noise.closing_axis_mm),
        high=(noise.finger_axis_mm, noise.closing_axis_mm),
        size=(trials, 2),
    )
    ind = indenter_id(object_indenter)
    out = []
    for finger_off, closing_off in offsets:
        depth = grasp_depth_mm + closing_off
        loc = grasp_location_from_tip_mm + finger_off
        if model is None:
            pred_depth, pred_loc = depth, loc
        else:
            sample = synth_sample(design, camera, depth, loc, indenter=ind)
            pred = np.asarray(model.forward(sample.frame.to_array()[None]))[0]
            pred_depth, pred_loc = float(pred[0]), float(pred[1])
        pf = pred_loc - grasp_location_from_tip_mm
        pc = pred_depth - grasp_depth_mm
        if condition in (SensingCondition.NO_SENSING, SensingCondition.DEPTH_ONLY):
            pf = 0.0  # contact location assumed centred
        if condition in (SensingCondition.NO_SENSING, SensingCondition.LOCATION_ONLY):
            pc = 0.0
        out.append(
            PlacementTrial(
                condition=condition.value,
                true_finger_mm=float(finger_off),
                true_closing_mm=float(closing_off),
                predicted_finger_mm=pf,
                predicted_closing_mm=pc,
            )
        )
    return out


def pick_place_all_conditions(model, design, camera, master_seed, **kwargs):
    """Run the four sensing conditions on identical pick offsets."""
    return {
        cond.value: pick_place_sim(model, design, camera, cond, master_seed, **kwargs)
        for cond in SensingCondition
    }


def placement_summary(trials_by_condition: dict[str, list[PlacementTrial]]) -> list[dict]:
    rows = []
    for cond, trials in trials_by_condition.items():
        errs = np.array([t.error_mm for t in trials])
        rows.append(
            {
                "condition": cond,
                "trials": len(trials),
                "mean_error_mm": float(errs.mean()),
                "sd_error_mm": float(errs.std(ddof=1)) if len(errs) > 1 else 0.0,
                "max_error_mm": float(errs.max()),
            }
        )
    return rows
