"""Sensor contracts: layout, projection formula, occlusion, rasterization."""

import numpy as np
import pytest

from finray_tactile.mechanics import BeamState, FingerDesign, beam_state, pin_attachment_coords
from finray_tactile.sensor import (
    CameraConfig,
    MarkerFrame,
    PinRow,
    apply_occlusion,
    disc_offsets,
    pbm_bytes,
    pin_layout,
    project_markers,
    render_frame,
    round_half_away,
    sense_frame,
)


def synthetic_state(design, shift=0.0, rotation=0.0, deflection=None, slope=None):
    """BeamState with hand-picked fields (tests the projection formula alone)."""
    s_long, s_base = pin_attachment_coords(design)
    s = np.concatenate([s_long, s_base])
    zeros = np.zeros_like(s)
    return BeamState(
        shift_mm=shift,
        rotation_rad=rotation,
        attach_s_mm=s,
        deflection_at=zeros if deflection is None else np.asarray(deflection, float),
        slope_at=zeros if slope is None else np.asarray(slope, float),
        n_long=len(s_long),
    )


class TestPinLayout:
    def test_default_counts_and_symmetry(self):
        pins = pin_layout(FingerDesign())
        assert pins.n_long == 15
        assert pins.n_base == 14
        s_long = pins.attach_s_mm[pins.row == PinRow.LONG]
        assert np.allclose(s_long + s_long[::-1], 30.0, atol=1e-12)
        assert np.allclose(np.diff(s_long), 1.7, atol=1e-12)

    def test_base_row_offset_and_extent(self):
        d = FingerDesign()
        pins = pin_layout(d)
        s_long = np.sort(pins.attach_s_mm[pins.row == PinRow.LONG])
        s_base = np.sort(pins.attach_s_mm[pins.row == PinRow.BASE])
        assert np.allclose(s_base, s_long[:-1] + 0.85, atol=1e-12)
        assert np.all(pins.attach_s_mm > 0) and np.all(pins.attach_s_mm < 30.0)

    def test_no_base_pins(self):
        pins = pin_layout(FingerDesign(base_pins_present=False))
        assert pins.n_base == 0
        assert pins.n_long == 15

    def test_paper_pin_geometry_accepted(self):
        pin_layout(FingerDesign(pin_spacing_mm=1.7, pin_diameter_mm=0.9))

    def test_too_short_beam_rejected(self):
        d = FingerDesign(beam_length_mm=2.0, finger_length_mm=60.0)
        with pytest.raises(ValueError):
            pin_layout(d)


class TestProjection:
    def test_rest_grid(self):
        d = FingerDesign()
        cam = CameraConfig(resolution_px=128)
        proj = project_markers(d, beam_state(d, 0.0, 30.0), cam)
        u_long = np.sort(proj.u_px[proj.long_mask])
        assert np.allclose(np.diff(u_long), cam.scale * 1.7, atol=1e-12)
        assert len(set(proj.v_px[proj.long_mask])) == 1
        assert len(set(proj.v_px[proj.base_mask])) == 1
        # centered: middle long pin on the optical axis
        assert np.isclose(np.median(u_long), 64.0, atol=1e-12)

    def test_pure_shift_displaces_u_only(self):
        d = FingerDesign()
        cam = CameraConfig(resolution_px=128)  # g = 4 px/mm
        rest = project_markers(d, synthetic_state(d), cam)
        shifted = project_markers(d, synthetic_state(d, shift=-1.65), cam)
        assert np.allclose(shifted.u_px - rest.u_px, -6.6, atol=1e-12)
        assert np.array_equal(shifted.v_px, rest.v_px)

    def test_tilt_amplified_by_pin_length(self):
        # slope -0.20625 rad at every root: lateral tip offset p * slope
        cam = CameraConfig(resolution_px=128)
        for pin_len, expect_mm in [(5.5, -1.134375), (3.0, -0.61875)]:
            d = FingerDesign(long_pin_length_mm=pin_len)
            s_all = np.concatenate(pin_attachment_coords(d))
            state = synthetic_state(d, slope=np.full(len(s_all), -0.20625))
            rest = project_markers(d, synthetic_state(d), cam)
            proj = project_markers(d, state, cam)
            du = (proj.u_px - rest.u_px)[proj.long_mask]
            assert np.allclose(du, cam.scale * expect_mm, atol=1e-12)

    def test_deflection_moves_v_scaled_by_length_ratio(self):
        d = FingerDesign()  # long 5.5 (= reference), base 3.0
        cam = CameraConfig(resolution_px=128)
        s_all = np.concatenate(pin_attachment_coords(d))
        w = np.full(len(s_all), -1.0)
        proj = project_markers(d, synthetic_state(d, deflection=w), cam)
        rest = project_markers(d, synthetic_state(d), cam)
        dv = proj.v_px - rest.v_px
        assert np.allclose(dv[proj.long_mask], cam.scale * -1.0, atol=1e-12)
        assert np.allclose(dv[proj.base_mask], cam.scale * -1.0 * (3.0 / 5.5), atol=1e-12)

    def test_state_layout_mismatch_rejected(self):
        d = FingerDesign()
        other = FingerDesign(base_pins_present=False)
        with pytest.raises(ValueError):
            project_markers(d, beam_state(other, 1.0, 30.0), CameraConfig())


class TestOcclusion:
    def test_rest_visible_count(self):
        d = FingerDesign()
        cam = CameraConfig(resolution_px=128)  # g=4, halfwidth 5mm -> 20 px
        proj = apply_occlusion(d, project_markers(d, beam_state(d, 0.0, 30.0), cam), cam)
        base_vis = proj.visible[proj.base_mask]
        # rest base offsets from the axis: +-0.85, +-2.55, +-4.25 within 5 mm
        assert base_vis.sum() == 6
        assert np.all(proj.visible[proj.long_mask])

    def test_infinite_halfwidth_shows_all(self):
        d = FingerDesign()
        cam = CameraConfig(resolution_px=128, visibility_halfwidth_mm=np.inf)
        proj = apply_occlusion(d, project_markers(d, beam_state(d, 0.0, 30.0), cam), cam)
        assert proj.visible.all()

    def test_window_translates_with_shift(self):
        d = FingerDesign()
        cam = CameraConfig(resolution_px=128)
        rest = apply_occlusion(d, project_markers(d, synthetic_state(d), cam), cam)
        moved = apply_occlusion(
            d, project_markers(d, synthetic_state(d, shift=-1.0), cam), cam
        )
        vis_rest = rest.visible[rest.base_mask]
        vis_moved = moved.visible[moved.base_mask]
        assert not np.array_equal(vis_rest, vis_moved)
        assert vis_rest.sum() == vis_moved.sum() == 6  # the set translates


class TestRasterization:
    def test_round_half_away_from_zero(self):
        assert round_half_away(np.array([0.5, 1.5, 2.5, -0.5, -1.5, 0.49, -0.49])).tolist() == [
            1, 2, 3, -1, -2, 0, 0,
        ]

    def test_center_disc_13_pixels(self):
        # brute-force oracle: integer points within Euclidean distance 2
        count = sum(
            1
            for di in range(-3, 4)
            for dj in range(-3, 4)
            if di * di + dj * dj <= 4
        )
        assert count == 13
        assert len(disc_offsets(2)) == 13
        d = FingerDesign()
        cam = CameraConfig(resolution_px=128, marker_radius_px=2)
        proj = project_markers(d, synthetic_state(d), cam)
        one = type(proj)(
            u_px=np.array([64.0]),
            v_px=np.array([64.0]),
            row=np.array([0], dtype=np.int8),
            visible=np.array([True]),
        )
        frame = render_frame(one, cam)
        assert frame.n_set == 13

    def test_empty_projection_all_zero(self):
        cam = CameraConfig(resolution_px=64)
        proj_type = project_markers(
            FingerDesign(), beam_state(FingerDesign(), 0.0, 30.0), cam
        )
        empty = type(proj_type)(
            u_px=np.empty(0),
            v_px=np.empty(0),
            row=np.empty(0, dtype=np.int8),
            visible=np.empty(0, dtype=bool),
        )
        assert render_frame(empty, cam).n_set == 0

    def test_determinism(self):
        d = FingerDesign()
        cam = CameraConfig(resolution_px=64)
        st = beam_state(d, 4.2, 37.5)
        f1 = sense_frame(d, st, cam)
        f2 = sense_frame(d, st, cam)
        assert f1.packed == f2.packed

    def test_off_frame_markers_clipped(self):
        cam = CameraConfig(resolution_px=64, marker_radius_px=2)
        d = FingerDesign()
        proj = project_markers(d, synthetic_state(d, shift=-200.0), cam)
        frame = render_frame(proj, cam)
        assert frame.n_set == 0  # everything projected far off-frame

    def test_pixel_count_bounds(self):
        d = FingerDesign()
        cam = CameraConfig(resolution_px=128, marker_radius_px=2)
        for depth, loc_y in [(0.0, 30.0), (3.0, 25.0), (5.5, 50.0)]:
            st = beam_state(d, depth, loc_y)
            proj = apply_occlusion(d, project_markers(d, st, cam), cam)
            frame = render_frame(proj, cam)
            n_vis = int(proj.visible.sum())
            assert n_vis * 1 <= frame.n_set <= n_vis * 13


class TestFrameContainer:
    def test_array_roundtrip(self):
        rng = np.random.default_rng(0)
        arr = (rng.random((64, 64)) < 0.1).astype(np.uint8)
        frame = MarkerFrame.from_array(arr)
        assert np.array_equal(frame.to_array(), arr)

    def test_rejects_bad_arrays(self):
        with pytest.raises(ValueError):
            MarkerFrame.from_array(np.ones((4, 5), dtype=np.uint8))
        with pytest.raises(ValueError):
            MarkerFrame.from_array(np.full((4, 4), 7, dtype=np.uint8))

    def test_pbm_bytes_layout(self):
        arr = np.zeros((16, 16), dtype=np.uint8)
        arr[0, 0] = 1
        arr[15, 15] = 1
        blob = pbm_bytes(MarkerFrame.from_array(arr))
        assert blob.startswith(b"P4\n16 16\n")
        body = blob[len(b"P4\n16 16\n"):]
        assert len(body) == 16 * 2  # two bytes per 16-pixel row
        assert body[0] == 0b10000000
        assert body[-1] == 0b00000001


class TestSensingSignatures:
    def test_u_spread_nondecreasing_in_depth(self):
        d = FingerDesign()
        cam = CameraConfig(resolution_px=64)
        prev = -np.inf
        for depth in np.arange(1.0, 5.51, 0.5):
            st = beam_state(d, depth, 40.0)
            proj = project_markers(d, st, cam)
            u = proj.u_px[proj.long_mask]
            spread = u.max() - u.min()
            assert spread >= prev - 1e-12
            prev = spread

    def test_mean_u_strictly_monotone_in_location(self):
        d = FingerDesign()
        cam = CameraConfig(resolution_px=64)
        means = []
        for y in np.arange(10.0, 50.1, 5.0):
            st = beam_state(d, 3.0, y)
            proj = project_markers(d, st, cam)
            means.append(proj.u_px[proj.long_mask].mean())
        diffs = np.diff(means)
        assert np.all(diffs < 0)  # shift is negative and grows with the moment

    def test_distinct_contacts_give_distinct_frames(self):
        # probe of the injectivity property: the fraction of (d, y) PAIRS
        # mapping to an identical frame stays under 1% (0.1 mm grid uses the
        # same statistic; frames repeat only along narrow level sets)
        d = FingerDesign()
        cam = CameraConfig(resolution_px=64)
        groups = {}
        total = 0
        for depth in np.arange(1.0, 5.51, 0.25):
            for y in np.arange(10.0, 50.01, 1.0):
                st = beam_state(d, depth, y)
                key = sense_frame(d, st, cam).packed
                groups[key] = groups.get(key, 0) + 1
                total += 1
        same_pairs = sum(n * (n - 1) // 2 for n in groups.values())
        all_pairs = total * (total - 1) // 2
        assert same_pairs / all_pairs < 0.01
