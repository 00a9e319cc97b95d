"""Closed-form mechanics of the hinged Fin-Ray finger.

The finger is modelled as a rigid body of length L pivoting on a compliant
hinge pair (torsional stiffness k), carrying a fixed-fixed bottom crossbeam
of length L_b and flexural rigidity E*I. A contact at height y above the
hinge base pressing to depth d applies a perpendicular force F, producing

  * a hinge rotation  theta = -F*y / k  and, for small angles, a rigid
    horizontal shift of the whole crossbeam  dx = L*theta,
  * a bending deflection of the crossbeam  w(s) = M*s*(s - L_b) / (2*E*I)
    with clamped ends w(0) = w(L_b) = 0.

All lengths are millimetres, forces Newtons, angles radians.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

MAX_CONTACT_FORCE_N = 3.0  # structural budget of the printed finger


class HingeOrientation(str, Enum):
    OPPOSING = "opposing"
    CONCORDANT = "concordant"


class CouplingMode(str, Enum):
    """How the contact force is resolved from the indentation depth.

    PAPER_PURE: F = c*d, and the crossbeam bending moment is the full
    contact moment F*y. This reproduces the published closed forms exactly.

    COUPLED: the hinge shift relieves part of the indentation,
    F = c*(d - |dx(F)|) solved in closed form, and (when
    ``bend_arm_mm`` is set) the crossbeam bending moment is transmitted
    through the rib structure with a fixed effective arm instead of the
    full contact arm. This is the simulator default: it keeps translation
    tracking the contact moment while deflection tracks the transmitted
    force, which is what makes depth and location separately observable.
    """

    PAPER_PURE = "paper_pure"
    COUPLED = "coupled"


class SmallAngleWarning(UserWarning):
    """Hinge rotation left the small-angle regime the shift formula assumes."""


@dataclass(frozen=True)
class FingerDesign:
    """Geometry, stiffness and sensing parameters of one finger variant."""

    finger_length_mm: float = 60.0
    beam_length_mm: float = 30.0
    flexural_rigidity_nmm2: float = 10000.0
    torsional_stiffness_nmm_per_rad: float = 5000.0
    force_per_depth_n_per_mm: float = 0.5
    hinge_orientation: HingeOrientation = HingeOrientation.OPPOSING
    long_pin_length_mm: float = 5.5
    base_pins_present: bool = True
    base_pin_length_mm: float = 3.0
    pin_spacing_mm: float = 1.7
    pin_diameter_mm: float = 0.9
    coupling_mode: CouplingMode = CouplingMode.COUPLED
    # Effective rib-transmission arm driving crossbeam bending in COUPLED
    # mode; None falls back to the full contact arm y in every mode.
    bend_arm_mm: float | None = 45.0
    # Concordant hinges are softer in translation by this factor.
    concordant_stiffness_ratio: float = 0.25
    small_angle_warn_rad: float = 0.25

    def __post_init__(self):
        positive = {
            "finger_length_mm": self.finger_length_mm,
            "beam_length_mm": self.beam_length_mm,
            "flexural_rigidity_nmm2": self.flexural_rigidity_nmm2,
            "torsional_stiffness_nmm_per_rad": self.torsional_stiffness_nmm_per_rad,
            "force_per_depth_n_per_mm": self.force_per_depth_n_per_mm,
            "long_pin_length_mm": self.long_pin_length_mm,
            "base_pin_length_mm": self.base_pin_length_mm,
            "pin_spacing_mm": self.pin_spacing_mm,
            "pin_diameter_mm": self.pin_diameter_mm,
            "concordant_stiffness_ratio": self.concordant_stiffness_ratio,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"{name} must be strictly positive, got {value}")
        if self.beam_length_mm > self.finger_length_mm:
            raise ValueError("beam_length_mm must not exceed finger_length_mm")
        if self.pin_spacing_mm <= self.pin_diameter_mm:
            raise ValueError("pins overlap at rest: pin_spacing_mm must exceed pin_diameter_mm")
        if self.bend_arm_mm is not None and not self.bend_arm_mm > 0:
            raise ValueError("bend_arm_mm must be strictly positive or None")

    @property
    def effective_torsional_stiffness(self) -> float:
        k = self.torsional_stiffness_nmm_per_rad
        if self.hinge_orientation is HingeOrientation.CONCORDANT:
            return k * self.concordant_stiffness_ratio
        return k

    def check_force_budget(self, max_depth_mm: float) -> None:
        """Reject configurations whose peak contact force exceeds the 3 N budget."""
        fmax = self.force_per_depth_n_per_mm * max_depth_mm
        if fmax > MAX_CONTACT_FORCE_N + 1e-12:
            raise ValueError(
                f"c*d_max = {fmax:.3f} N exceeds the {MAX_CONTACT_FORCE_N} N force budget"
            )

    def to_dict(self) -> dict:
        return {
            "finger_length_mm": self.finger_length_mm,
            "beam_length_mm": self.beam_length_mm,
            "flexural_rigidity_nmm2": self.flexural_rigidity_nmm2,
            "torsional_stiffness_nmm_per_rad": self.torsional_stiffness_nmm_per_rad,
            "force_per_depth_n_per_mm": self.force_per_depth_n_per_mm,
            "hinge_orientation": self.hinge_orientation.value,
            "long_pin_length_mm": self.long_pin_length_mm,
            "base_pins_present": self.base_pins_present,
            "base_pin_length_mm": self.base_pin_length_mm,
            "pin_spacing_mm": self.pin_spacing_mm,
            "pin_diameter_mm": self.pin_diameter_mm,
            "coupling_mode": self.coupling_mode.value,
            "bend_arm_mm": self.bend_arm_mm,
            "concordant_stiffness_ratio": self.concordant_stiffness_ratio,
            "small_angle_warn_rad": self.small_angle_warn_rad,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FingerDesign":
        kwargs = dict(d)
        if "hinge_orientation" in kwargs:
            kwargs["hinge_orientation"] = HingeOrientation(kwargs["hinge_orientation"])
        if "coupling_mode" in kwargs:
            kwargs["coupling_mode"] = CouplingMode(kwargs["coupling_mode"])
        return cls(**kwargs)

    def replace(self, **changes) -> "FingerDesign":
        return replace(self, **changes)


def design_hash(design: FingerDesign) -> bytes:
    """32-byte digest identifying a design (canonical JSON, sorted keys)."""
    blob = json.dumps(design.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).digest()


@dataclass(frozen=True)
class Contact:
    """A resolved point contact: depth, height above the hinge base, force."""

    depth_mm: float
    location_mm: float  # y, moment arm above the hinge base
    force_n: float

    def __post_init__(self):
        if self.depth_mm < 0:
            raise ValueError(f"depth_mm must be >= 0, got {self.depth_mm}")
        if self.force_n < 0:
            raise ValueError(f"force_n must be >= 0, got {self.force_n}")


def coupled_contact_force(design: FingerDesign, depth_mm: float, location_mm: float) -> float:
    """Contact force for a given indentation depth at height y.

    PAPER_PURE returns c*d. COUPLED solves the self-consistent relief
    F = c*(d - |dx(F)|), whose closed form is F = c*d / (1 + c*L*y/k).
    """
    if depth_mm < 0:
        raise ValueError("depth_mm must be >= 0")
    c = design.force_per_depth_n_per_mm
    if design.coupling_mode is CouplingMode.PAPER_PURE:
        return c * depth_mm
    L = design.finger_length_mm
    k = design.effective_torsional_stiffness
    return c * depth_mm / (1.0 + c * L * location_mm / k)


def make_contact(design: FingerDesign, depth_mm: float, location_mm: float) -> Contact:
    """Build a Contact with the force resolved per the design's coupling mode."""
    if not 0.0 <= location_mm <= design.finger_length_mm:
        raise ValueError(
            f"location_mm must lie in [0, {design.finger_length_mm}], got {location_mm}"
        )
    force = coupled_contact_force(design, depth_mm, location_mm)
    return Contact(depth_mm=depth_mm, location_mm=location_mm, force_n=force)


def location_from_tip_to_height(design: FingerDesign, from_tip_mm: float) -> float:
    """Convert a contact location reported from the fingertip to height y above the hinge."""
    return design.finger_length_mm - from_tip_mm


def height_to_location_from_tip(design: FingerDesign, y_mm: float) -> float:
    return design.finger_length_mm - y_mm


# --------------------------------------------------------------------------
# hinge kinematics


def hinge_rotation(design: FingerDesign, contact: Contact) -> float:
    """Hinge rotation theta = -F*y/k (radians)."""
    k = design.effective_torsional_stiffness
    return -contact.force_n * contact.location_mm / k


def hinge_shift(design: FingerDesign, contact: Contact) -> float:
    """Small-angle horizontal shift of the crossbeam, dx = L*theta = -L*F*y/k.

    Warns with SmallAngleWarning when |theta| exceeds the design threshold;
    the value is still returned (the model is small-angle throughout).
    """
    theta = hinge_rotation(design, contact)
    if abs(theta) > design.small_angle_warn_rad:
        warnings.warn(
            f"hinge rotation {theta:.3f} rad exceeds the small-angle threshold "
            f"{design.small_angle_warn_rad} rad",
            SmallAngleWarning,
            stacklevel=2,
        )
    return design.finger_length_mm * theta


def shifted_coordinate(s_mm, shift_mm):
    """Material coordinate after the rigid shift: x' = s - dx."""
    return s_mm - shift_mm


def bending_moment(contact: Contact) -> float:
    """Contact moment about the hinge base, M = F*y (N*mm)."""
    return contact.force_n * contact.location_mm


def _check_span(design: FingerDesign, s_mm) -> np.ndarray:
    s = np.asarray(s_mm, dtype=float)
    if np.any(s < 0) or np.any(s > design.beam_length_mm):
        raise ValueError(f"s must lie in [0, {design.beam_length_mm}] mm")
    return s


def deflection(design: FingerDesign, s_mm, contact: Contact):
    """Fixed-fixed beam deflection w(s) = F*y*s*(s - L_b) / (2*E*I).

    Accepts a scalar or array of beam coordinates s in [0, L_b].
    Nonpositive on the open span for F*y > 0 and symmetric about L_b/2.
    """
    s = _check_span(design, s_mm)
    lb = design.beam_length_mm
    m = bending_moment(contact)
    w = m * s * (s - lb) / (2.0 * design.flexural_rigidity_nmm2)
    return w if w.ndim else float(w)


def deflection_slope(design: FingerDesign, s_mm, contact: Contact):
    """Analytic dw/ds = F*y*(2s - L_b) / (2*E*I), antisymmetric about L_b/2."""
    s = _check_span(design, s_mm)
    lb = design.beam_length_mm
    m = bending_moment(contact)
    slope = m * (2.0 * s - lb) / (2.0 * design.flexural_rigidity_nmm2)
    return slope if slope.ndim else float(slope)


def overall_deformation(design: FingerDesign, s_mm, contact: Contact):
    """Deflection evaluated at the shifted coordinate (translation + bending).

    Equals (F*y / 2EI) * (s + L*F*y/k) * (s + L*F*y/k - L_b); reduces to
    ``deflection`` in the rigid-hinge limit k -> inf.
    """
    s = _check_span(design, s_mm)
    lb = design.beam_length_mm
    m = bending_moment(contact)
    xp = shifted_coordinate(s, hinge_shift(design, contact))
    w = m * xp * (xp - lb) / (2.0 * design.flexural_rigidity_nmm2)
    return w if w.ndim else float(w)


# --------------------------------------------------------------------------
# pin attachment geometry (shared with the sensor module)


def pin_attachment_coords(design: FingerDesign) -> tuple[np.ndarray, np.ndarray]:
    """Beam coordinates of the long and base pin rows.

    The long row is an odd, centered comb: pins at L_b/2 + i*spacing for
    |i| <= floor((L_b/2 - spacing)/spacing), keeping one spacing of margin
    at each end (15 pins for the default design). The base row sits at the
    midpoints between long pins (14 pins), empty when base pins are absent.
    """
    lb = design.beam_length_mm
    sp = design.pin_spacing_mm
    half = int(np.floor((lb / 2.0 - sp) / sp))
    if half < 0:
        raise ValueError("beam too short for a single pin at the required margin")
    i = np.arange(-half, half + 1, dtype=float)
    s_long = lb / 2.0 + sp * i
    if design.base_pins_present:
        s_base = lb / 2.0 + sp * (np.arange(-half, half, dtype=float) + 0.5)
    else:
        s_base = np.empty(0, dtype=float)
    return s_long, s_base


# --------------------------------------------------------------------------
# aggregated beam state


@dataclass(frozen=True)
class BeamState:
    """Resolved mechanical state of the crossbeam, sampled at the pin roots."""

    shift_mm: float
    rotation_rad: float
    attach_s_mm: np.ndarray  # concatenated [long row, base row] coordinates
    deflection_at: np.ndarray
    slope_at: np.ndarray
    n_long: int
    small_angle_exceeded: bool = False

    @property
    def long_slice(self) -> slice:
        return slice(0, self.n_long)

    @property
    def base_slice(self) -> slice:
        return slice(self.n_long, len(self.attach_s_mm))


def beam_state(design: FingerDesign, depth_mm: float, location_mm: float) -> BeamState:
    """Evaluate shift, rotation, deflection and slope at every pin root.

    The bending moment is F*y in PAPER_PURE mode (the published model) and
    F*bend_arm_mm in COUPLED mode when the rib-transmission arm is set; the
    hinge always feels the full contact moment. Deflection and slope are
    evaluated at the shifted material coordinate, matching the combined
    translation + bending closed form.
    """
    contact = make_contact(design, depth_mm, location_mm)
    theta = hinge_rotation(design, contact)
    exceeded = abs(theta) > design.small_angle_warn_rad
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SmallAngleWarning)
        dx = hinge_shift(design, contact)
    if exceeded:
        warnings.warn(
            f"hinge rotation {theta:.3f} rad exceeds the small-angle threshold",
            SmallAngleWarning,
            stacklevel=2,
        )

    use_fixed_arm = (
        design.coupling_mode is CouplingMode.COUPLED and design.bend_arm_mm is not None
    )
    arm = design.bend_arm_mm if use_fixed_arm else contact.location_mm
    m_bend = contact.force_n * arm

    s_long, s_base = pin_attachment_coords(design)
    s = np.concatenate([s_long, s_base])
    lb = design.beam_length_mm
    ei = design.flexural_rigidity_nmm2
    xp = shifted_coordinate(s, dx)
    w = m_bend * xp * (xp - lb) / (2.0 * ei)
    slope = m_bend * (2.0 * xp - lb) / (2.0 * ei)
    return BeamState(
        shift_mm=dx,
        rotation_rad=theta,
        attach_s_mm=s,
        deflection_at=w,
        slope_at=slope,
        n_long=len(s_long),
        small_angle_exceeded=exceeded,
    )


def superpose_beam_states(states: list[BeamState]) -> BeamState:
    """Sum of linear beam responses (used for distributed contact patches)."""
    if not states:
        raise ValueError("need at least one BeamState to superpose")
    first = states[0]
    for st in states[1:]:
        if not np.array_equal(st.attach_s_mm, first.attach_s_mm):
            raise ValueError("beam states sampled at different pin coordinates")
    return BeamState(
        shift_mm=sum(st.shift_mm for st in states),
        rotation_rad=sum(st.rotation_rad for st in states),
        attach_s_mm=first.attach_s_mm,
        deflection_at=np.sum([st.deflection_at for st in states], axis=0),
        slope_at=np.sum([st.slope_at for st in states], axis=0),
        n_long=first.n_long,
        small_angle_exceeded=any(st.small_angle_exceeded for st in states),
    )
