"""Contact sampling, indenter patch models, dataset synthesis and persistence.

Labels follow the data-collection convention of the physical rig: the
commanded (indentation depth, contact location measured from the fingertip)
pair is the ground truth, regardless of indenter shape. Datasets persist in
the binary TFRD format (packed frames + float64 labels), with a JSON sidecar
for humans.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .mechanics import (
    BeamState,
    FingerDesign,
    beam_state,
    design_hash,
    location_from_tip_to_height,
    superpose_beam_states,
)
from .sensor import CameraConfig, MarkerFrame, frame_provenance, sense_frame

TFRD_MAGIC = b"TFRD"
TFRD_VERSION = 1

SPLIT_TRAIN = 0
SPLIT_VAL = 1


class DatasetFormatError(Exception):
    """Base class for dataset file problems."""


class NotADatasetError(DatasetFormatError):
    """The file does not carry the TFRD magic."""


class DatasetVersionError(DatasetFormatError):
    """The file is a TFRD dataset of an unsupported version."""


class DatasetTruncatedError(DatasetFormatError):
    """The payload is shorter than the header promises."""


@dataclass(frozen=True)
class ContactRanges:
    """Sampling rectangle: indentation depth x location measured from the tip."""

    depth_min_mm: float = 1.0
    depth_max_mm: float = 5.5
    location_from_tip_min_mm: float = 10.0
    location_from_tip_max_mm: float = 50.0

    def __post_init__(self):
        if not self.depth_min_mm < self.depth_max_mm:
            raise ValueError("depth range must satisfy min < max")
        if not self.location_from_tip_min_mm < self.location_from_tip_max_mm:
            raise ValueError("location range must satisfy min < max")

    def validate_for(self, design: FingerDesign) -> None:
        """Ranges must map inside [0, L] after tip-to-hinge conversion, and the
        peak force must respect the structural budget."""
        for ft in (self.location_from_tip_min_mm, self.location_from_tip_max_mm):
            y = location_from_tip_to_height(design, ft)
            if not 0.0 <= y <= design.finger_length_mm:
                raise ValueError(
                    f"location {ft} mm from tip falls outside the finger (y={y} mm)"
                )
        if self.depth_min_mm < 0:
            raise ValueError("depth range must be nonnegative")
        design.check_force_budget(self.depth_max_mm)

    def contains(self, depth_mm: float, location_from_tip_mm: float) -> bool:
        return (
            self.depth_min_mm <= depth_mm <= self.depth_max_mm
            and self.location_from_tip_min_mm
            <= location_from_tip_mm
            <= self.location_from_tip_max_mm
        )

    def to_dict(self) -> dict:
        return {
            "depth_min_mm": self.depth_min_mm,
            "depth_max_mm": self.depth_max_mm,
            "location_from_tip_min_mm": self.location_from_tip_min_mm,
            "location_from_tip_max_mm": self.location_from_tip_max_mm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ContactRanges":
        return cls(**d)


# --------------------------------------------------------------------------
# indenter shapes


@dataclass(frozen=True)
class IndenterShape:
    """Circular indenters touch at a single tangent point; flat indenters
    make a distributed line contact sampled as q point contacts."""

    kind: str  # "circular" | "flat"
    dimension_mm: float  # diameter for circular, width for flat

    def __post_init__(self):
        if self.kind not in ("circular", "flat"):
            raise ValueError(f"unknown indenter kind {self.kind!r}")
        if not self.dimension_mm > 0:
            raise ValueError("indenter dimension must be positive")

    @property
    def label(self) -> str:
        return f"{self.kind}_{self.dimension_mm:g}mm"


# Spec enumeration: the training indenter, five flats, and the large cylinder.
INDENTER_REGISTRY: tuple[IndenterShape, ...] = (
    IndenterShape("circular", 10.0),
    IndenterShape("flat", 1.0),
    IndenterShape("flat", 2.0),
    IndenterShape("flat", 3.0),
    IndenterShape("flat", 5.0),
    IndenterShape("flat", 7.0),
    IndenterShape("circular", 30.0),
)
TRAIN_INDENTER_ID = 0


def indenter_id(shape: IndenterShape) -> int:
    for i, s in enumerate(INDENTER_REGISTRY):
        if s == shape:
            return i
    raise ValueError(f"indenter {shape.label} is not in the registry")


def flat_patch_count(width_mm: float) -> int:
    """Sample points for a flat contact: at least 3, at least one per mm."""
    return max(3, int(np.ceil(width_mm / 1.0)))


def indenter_patch(
    shape: IndenterShape,
    location_mm: float,
    depth_mm: float,
    finger_length_mm: float,
) -> list[tuple[float, float]]:
    """Point contacts (y_i, d_i) equivalent to the indenter pressing at a
    centroid height ``location_mm`` (above the hinge) to ``depth_mm``.

    Circular: one tangent point at the centroid with the full depth.
    Flat(width): q equally spaced points across the width, uniform depth;
    per-point forces are superposed downstream with weight 1/q.
    """
    if shape.kind == "circular":
        pts = [(location_mm, depth_mm)]
    else:
        q = flat_patch_count(shape.dimension_mm)
        ys = location_mm + np.linspace(
            -shape.dimension_mm / 2.0, shape.dimension_mm / 2.0, q
        )
        pts = [(float(y), depth_mm) for y in ys]
    for y, _ in pts:
        if not 0.0 <= y <= finger_length_mm:
            raise ValueError(
                f"contact patch extends beyond the finger: y={y:.2f} mm "
                f"outside [0, {finger_length_mm}] mm"
            )
    return pts


def patch_beam_state(design: FingerDesign, patch: list[tuple[float, float]]) -> BeamState:
    """Superposed beam response of a patch; each point carries weight 1/q."""
    q = len(patch)
    states = []
    for y, d in patch:
        st = beam_state(design, d, y)
        states.append(
            BeamState(
                shift_mm=st.shift_mm / q,
                rotation_rad=st.rotation_rad / q,
                attach_s_mm=st.attach_s_mm,
                deflection_at=st.deflection_at / q,
                slope_at=st.slope_at / q,
                n_long=st.n_long,
                small_angle_exceeded=st.small_angle_exceeded,
            )
        )
    return superpose_beam_states(states)


# --------------------------------------------------------------------------
# samples and datasets


@dataclass(frozen=True)
class Sample:
    frame: MarkerFrame
    depth_mm: float
    location_from_tip_mm: float
    indenter: int = TRAIN_INDENTER_ID
    split: int = SPLIT_TRAIN
    extrapolated: bool = False


@dataclass
class Dataset:
    samples: list[Sample]
    ranges: ContactRanges
    design_digest: bytes
    seed: int
    resolution_px: int

    def __len__(self) -> int:
        return len(self.samples)

    def split_indices(self, split: int) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.samples) if s.split == split], dtype=int)

    def frames_array(self, indices=None) -> np.ndarray:
        idx = range(len(self.samples)) if indices is None else indices
        return np.stack([self.samples[i].frame.to_array() for i in idx])

    def labels_array(self, indices=None) -> np.ndarray:
        idx = range(len(self.samples)) if indices is None else indices
        return np.array(
            [[self.samples[i].depth_mm, self.samples[i].location_from_tip_mm] for i in idx]
        )


def sample_contacts(
    ranges: ContactRanges, n: int, seed: int
) -> list[tuple[float, float]]:
    """n i.i.d. uniform (depth, location-from-tip) draws; deterministic per seed."""
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = np.random.default_rng(seed)
    draws = rng.uniform(
        low=(ranges.depth_min_mm, ranges.location_from_tip_min_mm),
        high=(ranges.depth_max_mm, ranges.location_from_tip_max_mm),
        size=(n, 2),
    )
    return [(float(d), float(t)) for d, t in draws]


def synth_sample(
    design: FingerDesign,
    camera: CameraConfig,
    depth_mm: float,
    location_from_tip_mm: float,
    indenter: int = TRAIN_INDENTER_ID,
    ranges: ContactRanges | None = None,
    seed: int | None = None,
    split: int = SPLIT_TRAIN,
) -> Sample:
    """Simulate one contact with the given indenter and render its frame.

    The label stores the commanded (depth, location-from-tip) pair, mirroring
    robot-kinematics ground truth.
    """
    shape = INDENTER_REGISTRY[indenter]
    y = location_from_tip_to_height(design, location_from_tip_mm)
    patch = indenter_patch(shape, y, depth_mm, design.finger_length_mm)
    state = patch_beam_state(design, patch)
    prov = frame_provenance(
        design, depth_mm=depth_mm, location_from_tip_mm=location_from_tip_mm, seed=seed
    )
    frame = sense_frame(design, state, camera, provenance=prov)
    extrapolated = ranges is not None and not ranges.contains(
        depth_mm, location_from_tip_mm
    )
    return Sample(
        frame=frame,
        depth_mm=depth_mm,
        location_from_tip_mm=location_from_tip_mm,
        indenter=indenter,
        split=split,
        extrapolated=extrapolated,
    )


def generate_dataset(
    design: FingerDesign,
    camera: CameraConfig,
    ranges: ContactRanges,
    n: int,
    seed: int,
    indenter: int = TRAIN_INDENTER_ID,
    split_ratio: float | None = 0.8,
    jobs: int = 1,
) -> Dataset:
    """Sample n contacts, synthesize frames, optionally assign a train/val split.

    The persisted sample order equals the sampling order so a seed
    reproduces files bit-exactly; parallel synthesis preserves that order.
    """
    ranges.validate_for(design)
    contacts = sample_contacts(ranges, n, seed)
    args = [
        (design, camera, d, t, indenter, ranges, seed) for d, t in contacts
    ]
    if jobs > 1 and n > 1:
        import multiprocessing as mp

        with mp.Pool(processes=jobs) as pool:
            samples = pool.starmap(synth_sample, args, chunksize=64)
    else:
        samples = [synth_sample(*a) for a in args]
    ds = Dataset(
        samples=list(samples),
        ranges=ranges,
        design_digest=design_hash(design),
        seed=seed,
        resolution_px=camera.resolution_px,
    )
    if split_ratio is not None:
        ds = split_dataset(ds, split_ratio, seed)
    return ds


def split_dataset(ds: Dataset, ratio: float, seed: int) -> Dataset:
    """Assign a uniformly random train/val partition.

    Train count = round(n * ratio) with half-up rounding (n=1, ratio=0.8
    gives 1 train / 0 val). Deterministic per seed.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("split ratio must lie strictly between 0 and 1")
    n = len(ds)
    n_train = int(np.floor(n * ratio + 0.5))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    train_set = set(perm[:n_train].tolist())
    samples = [
        Sample(
            frame=s.frame,
            depth_mm=s.depth_mm,
            location_from_tip_mm=s.location_from_tip_mm,
            indenter=s.indenter,
            split=SPLIT_TRAIN if i in train_set else SPLIT_VAL,
            extrapolated=s.extrapolated,
        )
        for i, s in enumerate(ds.samples)
    ]
    return Dataset(
        samples=samples,
        ranges=ds.ranges,
        design_digest=ds.design_digest,
        seed=ds.seed,
        resolution_px=ds.resolution_px,
    )


# --------------------------------------------------------------------------
# TFRD file format
#
# magic "TFRD" | version u16 | design hash 32B | resolution u16 | n u32
# | ranges 4*f64 | seed u64, all little-endian; then per sample:
# packed bitmap ceil(res^2/8) bytes | depth f64 | location f64
# | indenter u8 | split u8.

_HEADER = struct.Struct("<4sH32sHIddddQ")
_SAMPLE_TAIL = struct.Struct("<ddBB")


def write_dataset(ds: Dataset, path) -> None:
    res = ds.resolution_px
    frame_bytes = (res * res + 7) // 8
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                TFRD_MAGIC,
                TFRD_VERSION,
                ds.design_digest,
                res,
                len(ds),
                ds.ranges.depth_min_mm,
                ds.ranges.depth_max_mm,
                ds.ranges.location_from_tip_min_mm,
                ds.ranges.location_from_tip_max_mm,
                ds.seed,
            )
        )
        for s in ds.samples:
            if len(s.frame.packed) != frame_bytes:
                raise ValueError("sample frame resolution disagrees with dataset header")
            fh.write(s.frame.packed)
            fh.write(
                _SAMPLE_TAIL.pack(s.depth_mm, s.location_from_tip_mm, s.indenter, s.split)
            )


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != TFRD_MAGIC:
        raise NotADatasetError(f"{path}: not a dataset (bad magic)")
    if len(blob) < _HEADER.size:
        raise DatasetTruncatedError(f"{path}: header truncated")
    (_, version, digest, res, n, dmin, dmax, lmin, lmax, seed) = _HEADER.unpack_from(blob)
    if version != TFRD_VERSION:
        raise DatasetVersionError(
            f"{path}: unsupported dataset version {version} (expected {TFRD_VERSION})"
        )
    frame_bytes = (res * res + 7) // 8
    rec = frame_bytes + _SAMPLE_TAIL.size
    expected = _HEADER.size + n * rec
    if len(blob) != expected:
        raise DatasetTruncatedError(
            f"{path}: payload holds {len(blob) - _HEADER.size} bytes for {n} samples "
            f"(expected {n * rec})"
        )
    ranges = ContactRanges(dmin, dmax, lmin, lmax)
    samples = []
    off = _HEADER.size
    for _ in range(n):
        packed = blob[off : off + frame_bytes]
        depth, loc, ind, split = _SAMPLE_TAIL.unpack_from(blob, off + frame_bytes)
        samples.append(
            Sample(
                frame=MarkerFrame(resolution_px=res, packed=packed),
                depth_mm=depth,
                location_from_tip_mm=loc,
                indenter=ind,
                split=split,
                extrapolated=not ranges.contains(depth, loc),
            )
        )
        off += rec
    return Dataset(
        samples=samples,
        ranges=ranges,
        design_digest=digest,
        seed=seed,
        resolution_px=res,
    )


def dataset_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_sidecar(
    ds: Dataset, path, design: FingerDesign, camera: CameraConfig
) -> None:
    """Human-readable JSON metadata next to a TFRD file."""
    n_train = int(sum(1 for s in ds.samples if s.split == SPLIT_TRAIN))
    meta = {
        "format": "TFRD",
        "version": TFRD_VERSION,
        "n_samples": len(ds),
        "n_train": n_train,
        "n_val": len(ds) - n_train,
        "resolution_px": ds.resolution_px,
        "seed": ds.seed,
        "design": design.to_dict(),
        "design_hash": ds.design_digest.hex(),
        "camera": camera.to_dict(),
        "ranges": ds.ranges.to_dict(),
        "created_unix": time.time(),
    }
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
