"""Slice timing, rigid motion, Gaussian smoothing, high-pass filtering."""

import numpy as np
import pytest

from boldkit.errors import InsufficientDataError, ShapeError
from boldkit.preprocess import (
    RigidMotion,
    SliceOrder,
    apply_motion,
    estimate_motion,
    fwhm_to_sigma_vox,
    gaussian_kernel_1d,
    gaussian_smooth,
    highpass_filter,
    interleaved_order,
    invert_rigid,
    resample_rigid,
    rotation_matrix,
    sequential_order,
    slice_offsets_s,
    slice_timing_correct,
)
from boldkit.volume_io import make_volume

from oracles import gaussian_kernel_3d

VOXEL = (3.3, 3.3, 4.8)


def smooth_blob_field(dims, n_blobs=6, seed=0, margin=5.0, width_mm=(8.0, 16.0)):
    """Analytic sum-of-Gaussians phantom and its evaluator (mm coords)."""
    rng = np.random.default_rng(seed)
    voxel = np.asarray(VOXEL)
    blobs = [
        (
            float(rng.uniform(0.5, 2.0)),
            rng.uniform(margin, np.array(dims) - margin) * voxel,
            float(rng.uniform(*width_mm)),
        )
        for _ in range(n_blobs)
    ]

    def field(points_mm):
        value = np.zeros(points_mm.shape[:-1])
        for amp, center, width in blobs:
            value += amp * np.exp(-((points_mm - center) ** 2).sum(-1) / (2 * width**2))
        return value

    grid_mm = np.stack(
        np.meshgrid(*[np.arange(d, dtype=float) for d in dims], indexing="ij"), axis=-1
    ) * voxel
    return field, grid_mm


def inject_rigid_analytic(field, grid_mm, dims, params):
    """Evaluate the continuous field at rigidly-moved points (no interpolation)."""
    motion = RigidMotion.from_params(params)
    rot = rotation_matrix(motion.rotation_rad)
    center_mm = (np.array(dims) - 1) / 2 * np.asarray(VOXEL)
    inv = np.linalg.inv(rot)
    points = (grid_mm - center_mm) @ inv.T + center_mm - inv @ motion.translation_mm
    return field(points)


class TestSliceOrder:
    def test_interleaved_odd_first(self):
        order = interleaved_order(5)
        assert order.acquisition_sequence == (0, 2, 4, 1, 3)

    def test_offsets_are_multiples_of_tr_over_nz(self):
        # 21 interleaved slices at TR 3 s: offsets are multiples of 1/7 s
        order = interleaved_order(21)
        offsets = slice_offsets_s(order, 3.0)
        np.testing.assert_allclose(offsets[order.acquisition_sequence[1]], 3.0 / 21)
        steps = offsets / (3.0 / 21)
        np.testing.assert_allclose(steps, np.round(steps), atol=1e-12)
        assert sorted(offsets) == pytest.approx(list(np.arange(21) * 3.0 / 21))

    def test_invalid_permutation(self):
        with pytest.raises(ValueError):
            SliceOrder(acquisition_sequence=(0, 0, 1))


class TestSliceTiming:
    def test_constant_volume_unchanged(self):
        data = np.full((4, 4, 5, 10), 7.5)
        vol = make_volume(data, voxel_size_mm=VOXEL, tr_seconds=3.0)
        out = slice_timing_correct(vol, interleaved_order(5))
        np.testing.assert_allclose(out.data, data, atol=1e-12)

    def test_sinusoid_shifted_to_reference(self):
        nz, nt, tr = 6, 80, 3.0
        freq = 0.02
        order = sequential_order(nz, reference_fraction=0.5)
        offsets = slice_offsets_s(order, tr)
        times = np.arange(nt) * tr
        data = np.empty((2, 2, nz, nt))
        for z in range(nz):
            data[:, :, z, :] = np.sin(2 * np.pi * freq * (times + offsets[z]))
        vol = make_volume(data, voxel_size_mm=VOXEL, tr_seconds=tr)
        out = slice_timing_correct(vol, order)

        expected_times = times + 0.5 * tr
        bound = (2 * np.pi * freq * tr) ** 2 / 8  # linear-interp error for a sinusoid
        for z in range(nz):
            expected = np.sin(2 * np.pi * freq * expected_times)
            err = np.abs(out.data[0, 0, z, 1:-1] - expected[1:-1])
            assert err.max() < bound * 1.05

    def test_linearity(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((3, 3, 4, 12))
        b = rng.standard_normal((3, 3, 4, 12))
        order = interleaved_order(4)

        def correct(arr):
            return slice_timing_correct(
                make_volume(arr, voxel_size_mm=VOXEL, tr_seconds=2.0), order
            ).data

        np.testing.assert_allclose(
            correct(2.0 * a - 3.0 * b), 2.0 * correct(a) - 3.0 * correct(b), atol=1e-12
        )

    def test_too_few_volumes(self):
        vol = make_volume(np.zeros((2, 2, 3, 1)), tr_seconds=3.0)
        with pytest.raises(InsufficientDataError):
            slice_timing_correct(vol, sequential_order(3))

    def test_slice_count_mismatch(self):
        vol = make_volume(np.zeros((2, 2, 3, 5)), tr_seconds=3.0)
        with pytest.raises(ShapeError):
            slice_timing_correct(vol, sequential_order(4))


class TestRigidTransforms:
    def test_integer_shift_exact(self):
        rng = np.random.default_rng(2)
        data = rng.random((8, 8, 8))
        shifted = resample_rigid(data, RigidMotion(translation_mm=[3.3, 0, 0]), VOXEL)
        np.testing.assert_allclose(shifted[:-1], data[1:], atol=1e-12)

    def test_invert_round_trip(self):
        motion = RigidMotion.from_params([4.0, -2.0, 1.5, 0.03, -0.02, 0.035])
        inverse = invert_rigid(motion)
        rot = rotation_matrix(motion.rotation_rad)
        rot_inv = rotation_matrix(inverse.rotation_rad)
        np.testing.assert_allclose(rot @ rot_inv, np.eye(3), atol=1e-12)
        p = np.array([10.0, -5.0, 3.0])
        forward = rot @ p + motion.translation_mm
        np.testing.assert_allclose(rot_inv @ forward + inverse.translation_mm, p, atol=1e-12)

    def test_apply_identity_is_exact(self):
        rng = np.random.default_rng(3)
        vol = make_volume(rng.random((6, 6, 6, 4)), voxel_size_mm=VOXEL, tr_seconds=3.0)
        out = apply_motion(vol, [RigidMotion() for _ in range(4)])
        np.testing.assert_array_equal(out.data, vol.data)

    def test_integer_shift_then_unshift(self):
        rng = np.random.default_rng(4)
        data = rng.random((10, 10, 10))
        there = resample_rigid(data, RigidMotion(translation_mm=[3.3, -3.3, 4.8]), VOXEL)
        back = resample_rigid(there, RigidMotion(translation_mm=[-3.3, 3.3, -4.8]), VOXEL)
        interior = (slice(1, -1),) * 3
        np.testing.assert_allclose(back[interior], data[interior], atol=1e-12)

    def test_motion_length_mismatch(self):
        vol = make_volume(np.zeros((4, 4, 4, 3)), tr_seconds=3.0)
        with pytest.raises(ShapeError):
            apply_motion(vol, [RigidMotion()])


class TestEstimateMotion:
    def test_still_series_gives_exact_identity(self):
        field, grid = smooth_blob_field((12, 12, 10))
        frame = field(grid)
        vol = make_volume(np.stack([frame] * 3, axis=-1), voxel_size_mm=VOXEL, tr_seconds=3.0)
        for motion in estimate_motion(vol):
            assert np.abs(motion.translation_mm).max() < 1e-3
            assert np.abs(motion.rotation_rad).max() < 1e-4

    def test_recovers_injected_translation(self):
        dims = (16, 16, 12)
        field, grid = smooth_blob_field(dims, seed=5)
        ref = field(grid)
        true = np.array([1.5 * 3.3, -0.8 * 3.3, 0.4 * 4.8, 0.0, 0.0, 0.0])
        moved = inject_rigid_analytic(field, grid, dims, true)
        vol = make_volume(np.stack([ref, moved], axis=-1), voxel_size_mm=VOXEL, tr_seconds=3.0)
        est = estimate_motion(vol)[1]
        err_vox = np.abs((est.translation_mm - true[:3]) / np.asarray(VOXEL))
        assert err_vox.max() < 0.1

    def test_recovers_injected_rotation(self):
        dims = (16, 16, 12)
        field, grid = smooth_blob_field(dims, seed=6)
        ref = field(grid)
        true = np.array([0.0, 0.0, 0.0, 0.0, 0.0, np.deg2rad(2.0)])
        moved = inject_rigid_analytic(field, grid, dims, true)
        vol = make_volume(np.stack([ref, moved], axis=-1), voxel_size_mm=VOXEL, tr_seconds=3.0)
        est = estimate_motion(vol)[1]
        assert abs(np.rad2deg(est.rotation_rad[2]) - 2.0) < 0.5
        assert np.abs(np.rad2deg(est.rotation_rad[:2])).max() < 0.5

    def test_apply_after_estimate_reduces_msd(self):
        dims = (16, 16, 12)
        field, grid = smooth_blob_field(dims, seed=7)
        ref = field(grid)
        rng = np.random.default_rng(8)
        frames = [ref]
        for _ in range(2):
            params = np.concatenate([
                rng.uniform(-1.5, 1.5, 3) * np.asarray(VOXEL),
                np.deg2rad(rng.uniform(-1.5, 1.5, 3)),
            ])
            frames.append(inject_rigid_analytic(field, grid, dims, params))
        vol = make_volume(np.stack(frames, axis=-1), voxel_size_mm=VOXEL, tr_seconds=3.0)
        corrected = apply_motion(vol, estimate_motion(vol))
        interior = (slice(3, -3),) * 3
        for i in (1, 2):
            before = np.mean((vol.data[..., i] - ref) ** 2)
            after = np.mean((corrected.data[..., i] - ref) ** 2)
            assert after < before
            # away from the zero-filled borders the correction is strong
            before_in = np.mean((vol.data[..., i][interior] - ref[interior]) ** 2)
            after_in = np.mean((corrected.data[..., i][interior] - ref[interior]) ** 2)
            assert after_in < 0.1 * before_in


class TestGaussianSmooth:
    def test_sigma_arithmetic(self):
        sigma = fwhm_to_sigma_vox(8.0, VOXEL)
        assert sigma[0] == pytest.approx(3.3972 / 3.3, abs=2e-4)
        assert sigma[2] == pytest.approx(8.0 / 2.354820045 / 4.8, rel=1e-9)

    def test_kernel_unit_sum(self):
        for sigma in (0.4, 1.03, 2.7):
            assert gaussian_kernel_1d(sigma).sum() == pytest.approx(1.0, abs=1e-12)

    def test_constant_volume_unchanged(self):
        vol = make_volume(np.full((10, 10, 8, 2), 3.25), voxel_size_mm=VOXEL, tr_seconds=3.0)
        out = gaussian_smooth(vol, 8.0)
        np.testing.assert_allclose(out.data, 3.25, atol=1e-9)

    def test_interior_mean_preserved(self):
        rng = np.random.default_rng(9)
        data = np.zeros((24, 24, 20, 1))
        data[10:14, 10:14, 8:12, 0] = rng.random((4, 4, 4))
        vol = make_volume(data, voxel_size_mm=VOXEL, tr_seconds=3.0)
        out = gaussian_smooth(vol, 8.0)
        assert out.data.mean() == pytest.approx(data.mean(), rel=1e-6)

    def test_white_noise_variance_reduction_matches_kernel(self):
        sigmas = fwhm_to_sigma_vox(8.0, VOXEL)
        radii = [int(np.floor(4 * s)) for s in sigmas]
        kernel3d = gaussian_kernel_3d(sigmas, radii)
        expected_factor = float((kernel3d**2).sum())

        rng = np.random.default_rng(10)
        ratios = []
        for _ in range(8):
            noise = rng.standard_normal((22, 22, 18, 1))
            vol = make_volume(noise, voxel_size_mm=VOXEL, tr_seconds=3.0)
            out = gaussian_smooth(vol, 8.0)
            interior = out.data[radii[0]:-radii[0], radii[1]:-radii[1], radii[2]:-radii[2], 0]
            ratios.append(interior.var() / noise.var())
        assert np.mean(ratios) == pytest.approx(expected_factor, rel=0.05)

    def test_linearity(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((8, 8, 6, 2))
        b = rng.standard_normal((8, 8, 6, 2))

        def smooth(arr):
            return gaussian_smooth(
                make_volume(arr, voxel_size_mm=VOXEL, tr_seconds=3.0), 8.0
            ).data

        np.testing.assert_allclose(
            smooth(1.5 * a + 0.5 * b), 1.5 * smooth(a) + 0.5 * smooth(b), atol=1e-12
        )


class TestHighpass:
    def test_linear_drift_mostly_removed(self):
        nt, tr = 100, 3.0
        drift = np.linspace(0.0, 50.0, nt)
        data = np.tile(drift, (3, 3, 2, 1))
        vol = make_volume(data, voxel_size_mm=VOXEL, tr_seconds=tr)
        out = highpass_filter(vol, 0.005)
        assert out.data[0, 0, 0].std() < 0.1 * drift.std()
        # variance removal (acceptance phrasing): >= 90 percent
        assert out.data[0, 0, 0].var() < 0.1 * drift.var()

    def test_constant_series_unchanged(self):
        vol = make_volume(np.full((2, 2, 2, 50), 11.0), tr_seconds=3.0)
        out = highpass_filter(vol, 0.005)
        np.testing.assert_allclose(out.data, 11.0, atol=1e-9)

    def test_fast_sinusoid_preserved(self):
        nt, tr = 100, 3.0
        t = np.arange(nt) * tr
        wave = np.sin(2 * np.pi * 0.05 * t)
        vol = make_volume(np.tile(wave, (2, 2, 2, 1)), tr_seconds=tr)
        out = highpass_filter(vol, 0.005)
        filtered = out.data[0, 0, 0]
        amplitude_ratio = np.linalg.norm(filtered - filtered.mean()) \
            / np.linalg.norm(wave - wave.mean())
        assert amplitude_ratio == pytest.approx(1.0, abs=0.02)

    def test_mean_restored(self):
        rng = np.random.default_rng(12)
        data = rng.standard_normal((3, 3, 2, 60)) + 500.0
        vol = make_volume(data, tr_seconds=3.0)
        out = highpass_filter(vol, 0.005)
        np.testing.assert_allclose(out.data.mean(axis=3), data.mean(axis=3), atol=1e-9)

    def test_idempotent(self):
        rng = np.random.default_rng(13)
        data = rng.standard_normal((4, 4, 3, 80)) + np.linspace(0, 20, 80)
        vol = make_volume(data, tr_seconds=3.0)
        once = highpass_filter(vol, 0.005)
        twice = highpass_filter(once, 0.005)
        np.testing.assert_allclose(twice.data, once.data, atol=1e-8)

    def test_too_few_volumes(self):
        vol = make_volume(np.zeros((2, 2, 2, 3)), tr_seconds=3.0)
        with pytest.raises(InsufficientDataError):
            highpass_filter(vol, 0.005)
