"""Marker-pin sensing: pin layout, camera projection, occlusion, rasterization.

An orthographic camera with scale g (pixels per millimetre) watches the
marker-tipped pins under the bottom crossbeam. A pin rooted at beam
coordinate s with length p projects to

    u = g * (s + dx + p * slope(s)) + u0        (lateral tip position)
    v = v_row + g * (p / p_ref) * w(s)          (deflection surrogate)

so the image encodes the rigid shift, the tip tilt amplified by pin length,
and the deflection profile. Base pins are short: only those within a
half-width window of the optical axis remain visible, and the visible set
translates with the crossbeam.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .mechanics import (
    BeamState,
    FingerDesign,
    design_hash,
    pin_attachment_coords,
)


class PinRow(IntEnum):
    LONG = 0
    BASE = 1


@dataclass(frozen=True)
class CameraConfig:
    """Orthographic camera model. Defaults derive from the resolution so the
    32 mm field of view is resolution-invariant (g = 4 px/mm at 128)."""

    resolution_px: int = 128
    px_per_mm: float | None = None
    optical_axis_mm: float | None = None  # beam coordinate on the axis; default L_b/2
    row_separation_mm: float = 4.0
    marker_radius_px: int | None = None
    visibility_halfwidth_mm: float = 5.0
    reference_pin_length_mm: float = 5.5

    def __post_init__(self):
        if self.resolution_px <= 0:
            raise ValueError("resolution_px must be positive")
        if self.px_per_mm is not None and not self.px_per_mm > 0:
            raise ValueError("px_per_mm must be positive")

    @property
    def scale(self) -> float:
        return self.px_per_mm if self.px_per_mm is not None else self.resolution_px / 32.0

    @property
    def radius_px(self) -> int:
        if self.marker_radius_px is not None:
            return self.marker_radius_px
        return max(1, self.resolution_px // 64)

    def axis_on_beam(self, design: FingerDesign) -> float:
        if self.optical_axis_mm is not None:
            return self.optical_axis_mm
        return design.beam_length_mm / 2.0

    def to_dict(self) -> dict:
        return {
            "resolution_px": self.resolution_px,
            "px_per_mm": self.px_per_mm,
            "optical_axis_mm": self.optical_axis_mm,
            "row_separation_mm": self.row_separation_mm,
            "marker_radius_px": self.marker_radius_px,
            "visibility_halfwidth_mm": self.visibility_halfwidth_mm,
            "reference_pin_length_mm": self.reference_pin_length_mm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraConfig":
        return cls(**d)


@dataclass(frozen=True)
class PinArray:
    """Pin roots on the beam: long row plus an optional base row at midpoints."""

    attach_s_mm: np.ndarray
    row: np.ndarray  # PinRow values, int8
    length_mm: np.ndarray

    @property
    def n_long(self) -> int:
        return int(np.sum(self.row == PinRow.LONG))

    @property
    def n_base(self) -> int:
        return int(np.sum(self.row == PinRow.BASE))

    def __len__(self) -> int:
        return len(self.attach_s_mm)


def pin_layout(design: FingerDesign) -> PinArray:
    """Deterministic pin layout for a design.

    Long row centered on the beam with one spacing of end margin (15 pins
    for the defaults); base row offset by half a spacing (14 pins), empty
    when base pins are absent. Raises if the beam cannot host a single pin.
    """
    s_long, s_base = pin_attachment_coords(design)
    s = np.concatenate([s_long, s_base])
    row = np.concatenate(
        [
            np.full(len(s_long), PinRow.LONG, dtype=np.int8),
            np.full(len(s_base), PinRow.BASE, dtype=np.int8),
        ]
    )
    length = np.concatenate(
        [
            np.full(len(s_long), design.long_pin_length_mm),
            np.full(len(s_base), design.base_pin_length_mm),
        ]
    )
    return PinArray(attach_s_mm=s, row=row, length_mm=length)


@dataclass(frozen=True)
class MarkerProjection:
    """Image-plane marker tips; invisible markers are kept but not rendered."""

    u_px: np.ndarray
    v_px: np.ndarray
    row: np.ndarray
    visible: np.ndarray

    def __len__(self) -> int:
        return len(self.u_px)

    @property
    def long_mask(self) -> np.ndarray:
        return self.row == PinRow.LONG

    @property
    def base_mask(self) -> np.ndarray:
        return self.row == PinRow.BASE


def project_markers(
    design: FingerDesign, state: BeamState, camera: CameraConfig
) -> MarkerProjection:
    """Project every pin tip into the image plane. All markers start visible;
    base-pin occlusion is applied by ``apply_occlusion``."""
    pins = pin_layout(design)
    if len(pins) == 0:
        raise ValueError("design yields an empty pin array")
    if len(pins) != len(state.attach_s_mm) or not np.allclose(
        pins.attach_s_mm, state.attach_s_mm
    ):
        raise ValueError("beam state was sampled at different pin coordinates")

    g = camera.scale
    res = camera.resolution_px
    u0 = res / 2.0 - g * camera.axis_on_beam(design)
    v_mid = res / 2.0
    v_row = np.where(
        pins.row == PinRow.LONG,
        v_mid - g * camera.row_separation_mm / 2.0,
        v_mid + g * camera.row_separation_mm / 2.0,
    )
    p = pins.length_mm
    u = g * (pins.attach_s_mm + state.shift_mm + p * state.slope_at) + u0
    v = v_row + g * (p / camera.reference_pin_length_mm) * state.deflection_at
    return MarkerProjection(
        u_px=u,
        v_px=v,
        row=pins.row.copy(),
        visible=np.ones(len(pins), dtype=bool),
    )


def apply_occlusion(
    design: FingerDesign, proj: MarkerProjection, camera: CameraConfig
) -> MarkerProjection:
    """Mark base-row markers visible only inside the optical-axis window.

    Long markers are always visible. The window is centred on the optical
    axis, so the visible base set translates with the crossbeam shift.
    """
    g = camera.scale
    # the optical axis projects to the frame centre by construction of u0
    u_axis = camera.resolution_px / 2.0
    in_window = np.abs(proj.u_px - u_axis) <= g * camera.visibility_halfwidth_mm
    visible = np.where(proj.base_mask, in_window, True)
    return MarkerProjection(
        u_px=proj.u_px, v_px=proj.v_px, row=proj.row, visible=visible
    )


@dataclass(frozen=True)
class FrameProvenance:
    design_hash_hex: str
    depth_mm: float | None = None
    location_from_tip_mm: float | None = None
    seed: int | None = None


@dataclass(frozen=True)
class MarkerFrame:
    """Square binary frame, stored packed (8 pixels per byte, row-major)."""

    resolution_px: int
    packed: bytes
    provenance: FrameProvenance | None = None

    def to_array(self) -> np.ndarray:
        res = self.resolution_px
        bits = np.unpackbits(np.frombuffer(self.packed, dtype=np.uint8), count=res * res)
        return bits.reshape(res, res)

    @classmethod
    def from_array(cls, arr: np.ndarray, provenance: FrameProvenance | None = None):
        arr = np.asarray(arr)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError("frame array must be square")
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("frame pixels must be 0 or 1")
        packed = np.packbits(arr.astype(np.uint8).ravel()).tobytes()
        return cls(resolution_px=arr.shape[0], packed=packed, provenance=provenance)

    @property
    def n_set(self) -> int:
        return int(np.unpackbits(np.frombuffer(self.packed, dtype=np.uint8)).sum())


def round_half_away(x) -> np.ndarray:
    """Round to nearest integer, ties away from zero (not banker's rounding)."""
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5)).astype(np.int64)


def disc_offsets(radius_px: int) -> np.ndarray:
    """Integer offsets of a filled Euclidean disc (13 pixels for radius 2)."""
    r = int(radius_px)
    d = np.arange(-r, r + 1)
    di, dj = np.meshgrid(d, d, indexing="ij")
    keep = di * di + dj * dj <= r * r
    return np.stack([di[keep], dj[keep]], axis=1)


def render_frame(
    proj: MarkerProjection,
    camera: CameraConfig,
    provenance: FrameProvenance | None = None,
) -> MarkerFrame:
    """Rasterize visible markers as filled discs; off-frame pixels are clipped.

    Deterministic: identical inputs give bit-identical frames.
    """
    res = camera.resolution_px
    img = np.zeros((res, res), dtype=np.uint8)
    vis = proj.visible
    if vis.any():
        cu = round_half_away(proj.u_px[vis])
        cv = round_half_away(proj.v_px[vis])
        offs = disc_offsets(camera.radius_px)
        rows = (cv[:, None] + offs[None, :, 0]).ravel()
        cols = (cu[:, None] + offs[None, :, 1]).ravel()
        keep = (rows >= 0) & (rows < res) & (cols >= 0) & (cols < res)
        img[rows[keep], cols[keep]] = 1
    return MarkerFrame.from_array(img, provenance=provenance)


def sense_frame(
    design: FingerDesign,
    state: BeamState,
    camera: CameraConfig,
    provenance: FrameProvenance | None = None,
) -> MarkerFrame:
    """Full sensing path: project, occlude, rasterize."""
    proj = apply_occlusion(design, project_markers(design, state, camera), camera)
    return render_frame(proj, camera, provenance=provenance)


def frame_provenance(
    design: FingerDesign,
    depth_mm: float | None = None,
    location_from_tip_mm: float | None = None,
    seed: int | None = None,
) -> FrameProvenance:
    return FrameProvenance(
        design_hash_hex=design_hash(design).hex(),
        depth_mm=depth_mm,
        location_from_tip_mm=location_from_tip_mm,
        seed=seed,
    )


def pbm_bytes(frame: MarkerFrame) -> bytes:
    """Binary PBM (magic P4): packed bits, one byte per 8 pixels, row-major,
    big-endian bit order, each row padded to a byte boundary."""
    arr = frame.to_array()
    header = f"P4\n{frame.resolution_px} {frame.resolution_px}\n".encode()
    body = np.packbits(arr, axis=1).tobytes()
    return header + body


def write_pbm(frame: MarkerFrame, path) -> None:
    with open(path, "wb") as fh:
        fh.write(pbm_bytes(frame))
