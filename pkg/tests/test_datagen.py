"""Dataset pipeline: sampling, patches, synthesis, split, TFRD persistence."""

import numpy as np
import pytest

from finray_tactile.datagen import (
    ContactRanges,
    Dataset,
    DatasetTruncatedError,
    DatasetVersionError,
    INDENTER_REGISTRY,
    IndenterShape,
    NotADatasetError,
    SPLIT_TRAIN,
    SPLIT_VAL,
    flat_patch_count,
    generate_dataset,
    indenter_id,
    indenter_patch,
    patch_beam_state,
    read_dataset,
    sample_contacts,
    split_dataset,
    synth_sample,
    write_dataset,
    write_sidecar,
)
from finray_tactile.mechanics import FingerDesign, beam_state, coupled_contact_force
from finray_tactile.sensor import CameraConfig, sense_frame


@pytest.fixture
def design():
    return FingerDesign()


@pytest.fixture
def camera():
    return CameraConfig(resolution_px=64)


class TestSampleContacts:
    def test_ranges_and_count(self):
        pts = sample_contacts(ContactRanges(), 4000, seed=7)
        assert len(pts) == 4000
        arr = np.array(pts)
        assert arr[:, 0].min() >= 1.0 and arr[:, 0].max() <= 5.5
        assert arr[:, 1].min() >= 10.0 and arr[:, 1].max() <= 50.0

    def test_empty_and_negative(self):
        assert sample_contacts(ContactRanges(), 0, seed=1) == []
        with pytest.raises(ValueError):
            sample_contacts(ContactRanges(), -1, seed=1)

    def test_seed_determinism(self):
        a = sample_contacts(ContactRanges(), 100, seed=13)
        b = sample_contacts(ContactRanges(), 100, seed=13)
        assert a == b
        c = sample_contacts(ContactRanges(), 100, seed=14)
        assert a != c

    def test_uniform_means_within_three_standard_errors(self):
        pts = np.array(sample_contacts(ContactRanges(), 4000, seed=7))
        for col, lo, hi in [(0, 1.0, 5.5), (1, 10.0, 50.0)]:
            mid = (lo + hi) / 2
            se = (hi - lo) / np.sqrt(12.0) / np.sqrt(len(pts))
            assert abs(pts[:, col].mean() - mid) < 3 * se


class TestIndenterPatch:
    def test_circular_single_tangent_point(self):
        assert indenter_patch(IndenterShape("circular", 10.0), 30.0, 3.0, 60.0) == [(30.0, 3.0)]

    def test_flat3_three_points(self):
        pts = indenter_patch(IndenterShape("flat", 3.0), 30.0, 3.0, 60.0)
        assert pts == [(28.5, 3.0), (30.0, 3.0), (31.5, 3.0)]

    def test_flat_centroid_exact(self):
        for width in (1.0, 2.0, 3.0, 5.0, 7.0):
            pts = indenter_patch(IndenterShape("flat", width), 33.3, 2.0, 60.0)
            ys = np.array([y for y, _ in pts])
            assert abs(ys.mean() - 33.3) < 1e-12
            assert len(pts) == flat_patch_count(width)

    def test_flat7_net_moment_superposition_oracle(self, design):
        # per-point force F_i = F(d, y_i)/q; the superposed shift must match
        # the closed form with the summed moment
        patch = indenter_patch(IndenterShape("flat", 7.0), 30.0, 3.0, 60.0)
        q = len(patch)
        st = patch_beam_state(design, patch)
        m_net = sum(
            coupled_contact_force(design, dpt, y) / q * y for y, dpt in patch
        )
        k = design.torsional_stiffness_nmm_per_rad
        expect_shift = -design.finger_length_mm * m_net / k
        assert st.shift_mm == pytest.approx(expect_shift, rel=1e-12)

    def test_patch_beyond_finger_rejected(self):
        with pytest.raises(ValueError):
            indenter_patch(IndenterShape("flat", 7.0), 58.0, 1.0, 60.0)

    def test_registry_ids(self):
        assert len(INDENTER_REGISTRY) == 7
        assert indenter_id(IndenterShape("circular", 10.0)) == 0
        assert indenter_id(IndenterShape("circular", 30.0)) == 6
        with pytest.raises(ValueError):
            indenter_id(IndenterShape("flat", 99.0))


class TestSynthSample:
    def test_zero_depth_rest_frame(self, design, camera):
        s = synth_sample(design, camera, 0.0, 30.0)
        rest = sense_frame(design, beam_state(design, 0.0, 30.0), camera)
        assert s.frame.packed == rest.packed
        assert s.depth_mm == 0.0

    def test_circular_equals_point_contact(self, design, camera):
        s = synth_sample(design, camera, 3.0, 30.0, indenter=0)
        y = design.finger_length_mm - 30.0
        point = sense_frame(design, beam_state(design, 3.0, y), camera)
        assert s.frame.packed == point.packed

    def test_flat7_beam_state_differs_from_point_contact(self, design):
        # distributed moment: the superposed coupled forces are relieved per
        # point, so the patch state is not the centroid point-contact state
        # (the difference is ~1e-4 relative, below pixel quantization)
        y = design.finger_length_mm - 30.0
        patch = indenter_patch(IndenterShape("flat", 7.0), y, 3.0, 60.0)
        st_patch = patch_beam_state(design, patch)
        st_point = beam_state(design, 3.0, y)
        assert st_patch.shift_mm != st_point.shift_mm
        assert not np.allclose(st_patch.deflection_at, st_point.deflection_at, rtol=1e-9)

    def test_extrapolation_flag(self, design, camera):
        r = ContactRanges()
        inside = synth_sample(design, camera, 3.0, 30.0, ranges=r)
        outside = synth_sample(design, camera, 0.5, 30.0, ranges=r)
        assert not inside.extrapolated
        assert outside.extrapolated


class TestSplit:
    def _tiny_dataset(self, n) -> Dataset:
        design = FingerDesign()
        camera = CameraConfig(resolution_px=64)
        return generate_dataset(
            design, camera, ContactRanges(), n=n, seed=3, split_ratio=None
        )

    def test_counts_80_20(self):
        ds = split_dataset(self._tiny_dataset(40), 0.8, seed=1)
        n_train = sum(1 for s in ds.samples if s.split == SPLIT_TRAIN)
        assert n_train == 32
        assert len(ds) - n_train == 8

    def test_partition_and_determinism_small_n(self):
        for n in range(1, 101):
            base = Dataset(
                samples=self._tiny_dataset(1).samples * n,
                ranges=ContactRanges(),
                design_digest=bytes(32),
                seed=0,
                resolution_px=64,
            )
            a = split_dataset(base, 0.8, seed=n)
            b = split_dataset(base, 0.8, seed=n)
            splits_a = [s.split for s in a.samples]
            assert splits_a == [s.split for s in b.samples]
            n_train = splits_a.count(SPLIT_TRAIN)
            assert n_train == int(np.floor(n * 0.8 + 0.5))
            assert n_train + splits_a.count(SPLIT_VAL) == n

    def test_single_sample_goes_to_train(self):
        ds = split_dataset(self._tiny_dataset(1), 0.8, seed=5)
        assert ds.samples[0].split == SPLIT_TRAIN

    def test_invalid_ratio(self):
        with pytest.raises(ValueError):
            split_dataset(self._tiny_dataset(2), 1.0, seed=0)


class TestPersistence:
    def _dataset(self, n=10) -> tuple[Dataset, FingerDesign, CameraConfig]:
        design = FingerDesign()
        camera = CameraConfig(resolution_px=64)
        ds = generate_dataset(design, camera, ContactRanges(), n=n, seed=21)
        return ds, design, camera

    def test_roundtrip_bit_identical(self, tmp_path):
        ds, design, camera = self._dataset()
        p1, p2 = tmp_path / "a.tfrd", tmp_path / "b.tfrd"
        write_dataset(ds, p1)
        write_dataset(read_dataset(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()
        back = read_dataset(p1)
        assert len(back) == len(ds)
        for s, t in zip(ds.samples, back.samples):
            assert s.frame.packed == t.frame.packed
            assert s.depth_mm == t.depth_mm  # exact float64
            assert s.location_from_tip_mm == t.location_from_tip_mm
            assert s.indenter == t.indenter and s.split == t.split

    def test_wrong_magic(self, tmp_path):
        p = tmp_path / "bad.tfrd"
        p.write_bytes(b"NOPE" + bytes(100))
        with pytest.raises(NotADatasetError, match="not a dataset"):
            read_dataset(p)

    def test_version_mismatch(self, tmp_path):
        ds, *_ = self._dataset(2)
        p = tmp_path / "v.tfrd"
        write_dataset(ds, p)
        blob = bytearray(p.read_bytes())
        blob[4:6] = (99).to_bytes(2, "little")
        p.write_bytes(bytes(blob))
        with pytest.raises(DatasetVersionError):
            read_dataset(p)

    def test_truncation_detected(self, tmp_path):
        ds, *_ = self._dataset(3)
        p = tmp_path / "t.tfrd"
        write_dataset(ds, p)
        p.write_bytes(p.read_bytes()[:-7])
        with pytest.raises(DatasetTruncatedError):
            read_dataset(p)

    def test_label_consistency_resimulation(self, tmp_path):
        # stored labels + design reproduce every frame bit-exactly
        ds, design, camera = self._dataset(6)
        p = tmp_path / "c.tfrd"
        write_dataset(ds, p)
        back = read_dataset(p)
        for s in back.samples:
            redo = synth_sample(
                design, camera, s.depth_mm, s.location_from_tip_mm, indenter=s.indenter
            )
            assert redo.frame.packed == s.frame.packed

    def test_sidecar(self, tmp_path):
        import json

        ds, design, camera = self._dataset(4)
        write_sidecar(ds, tmp_path / "ds.json", design, camera)
        meta = json.loads((tmp_path / "ds.json").read_text())
        assert meta["n_samples"] == 4
        assert meta["design"]["finger_length_mm"] == 60.0
        assert meta["design_hash"] == ds.design_digest.hex()


class TestGenerateDataset:
    def test_order_is_sampling_order_and_jobs_equivalent(self):
        design = FingerDesign()
        camera = CameraConfig(resolution_px=64)
        seq = generate_dataset(design, camera, ContactRanges(), n=8, seed=9, jobs=1)
        par = generate_dataset(design, camera, ContactRanges(), n=8, seed=9, jobs=2)
        pts = sample_contacts(ContactRanges(), 8, seed=9)
        for s, t, (dpt, loc) in zip(seq.samples, par.samples, pts):
            assert s.depth_mm == dpt and s.location_from_tip_mm == loc
            assert s.frame.packed == t.frame.packed

    def test_force_budget_enforced(self):
        design = FingerDesign(force_per_depth_n_per_mm=0.9)  # 0.9*5.5 ~ 4.95 N
        with pytest.raises(ValueError, match="force budget"):
            generate_dataset(
                design, CameraConfig(resolution_px=64), ContactRanges(), n=2, seed=0
            )
