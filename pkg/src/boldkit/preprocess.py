"""Temporal and spatial conditioning of 4-D series.

Slice-timing correction, rigid-body motion estimation/correction,
separable Gaussian smoothing, and DCT-based high-pass filtering. The
canonical order mirrors the analysis chain: slice timing, then motion,
then smoothing, with drift handled inside the GLM (or here, standalone).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import minimize

from .errors import InsufficientDataError, NumericError, ShapeError
from .task_design import dct_highpass_basis
from .volume_io import Volume4D

FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))
KERNEL_TRUNCATE_SIGMAS = 4.0


@dataclass(frozen=True)
class SliceOrder:
    """Slice acquisition order within one TR.

    acquisition_sequence lists 0-based slice indices in the order they
    were acquired; reference_fraction places the temporal reference
    within the TR (0.5 = mid-TR).
    """

    acquisition_sequence: tuple
    reference_fraction: float = 0.5

    def __post_init__(self):
        seq = tuple(int(z) for z in self.acquisition_sequence)
        object.__setattr__(self, "acquisition_sequence", seq)
        if sorted(seq) != list(range(len(seq))):
            raise ValueError("acquisition_sequence must be a permutation of 0..nz-1")
        if not 0.0 <= self.reference_fraction <= 1.0:
            raise ValueError("reference_fraction must lie in [0, 1]")

    def rank_of_slice(self) -> np.ndarray:
        """rank[z] = acquisition position of slice z."""
        ranks = np.empty(len(self.acquisition_sequence), dtype=np.int64)
        for position, z in enumerate(self.acquisition_sequence):
            ranks[z] = position
        return ranks


def interleaved_order(nz: int, reference_fraction: float = 0.5) -> SliceOrder:
    """Odd-first interleaved acquisition (slices 1,3,5,... then 2,4,...)."""
    seq = tuple(range(0, nz, 2)) + tuple(range(1, nz, 2))
    return SliceOrder(acquisition_sequence=seq, reference_fraction=reference_fraction)


def sequential_order(nz: int, reference_fraction: float = 0.5) -> SliceOrder:
    return SliceOrder(acquisition_sequence=tuple(range(nz)), reference_fraction=reference_fraction)


def slice_offsets_s(order: SliceOrder, tr_s: float) -> np.ndarray:
    """Acquisition time offset of each slice: rank * TR / nz."""
    nz = len(order.acquisition_sequence)
    return order.rank_of_slice() * (tr_s / nz)


def slice_timing_correct(vol: Volume4D, order: SliceOrder) -> Volume4D:
    """Shift every slice's series to the reference time within the TR.

    Linear interpolation between adjacent volumes; the first and last
    samples are clamped. The operation is linear in the data.
    """
    nx, ny, nz, nt = vol.header.dims
    if nz != len(order.acquisition_sequence):
        raise ShapeError(
            f"volume has {nz} slices but the order describes {len(order.acquisition_sequence)}"
        )
    if nt < 2:
        raise InsufficientDataError("slice timing correction needs at least 2 volumes")

    tr = vol.header.tr_seconds
    reference_s = order.reference_fraction * tr
    offsets = slice_offsets_s(order, tr)

    out = np.empty_like(vol.data)
    base = np.arange(nt, dtype=np.float64)
    for z in range(nz):
        shift_vols = (reference_s - offsets[z]) / tr
        pos = np.clip(base + shift_vols, 0.0, nt - 1.0)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, nt - 1)
        w = pos - lo
        series = vol.data[:, :, z, :]
        out[:, :, z, :] = series[:, :, lo] * (1.0 - w) + series[:, :, hi] * w
    return Volume4D(header=vol.header, data=out)


@dataclass
class RigidMotion:
    """6-DOF rigid transform: translations (mm) and rotations (radians).

    Rotations act about the volume center, composed in fixed order
    x, then y, then z.
    """

    translation_mm: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation_rad: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.translation_mm = np.asarray(self.translation_mm, dtype=np.float64).reshape(3)
        self.rotation_rad = np.asarray(self.rotation_rad, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(self.translation_mm)) and np.all(np.isfinite(self.rotation_rad))):
            raise ValueError("motion parameters must be finite")

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.translation_mm, self.rotation_rad])

    @classmethod
    def from_params(cls, params) -> "RigidMotion":
        params = np.asarray(params, dtype=np.float64).reshape(6)
        return cls(translation_mm=params[:3], rotation_rad=params[3:])


def rotation_matrix(rotation_rad) -> np.ndarray:
    rx, ry, rz = rotation_rad
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mz @ my @ mx


def invert_rigid(motion: RigidMotion) -> RigidMotion:
    """Parameters of the inverse transform (same axis-order convention)."""
    rot = rotation_matrix(motion.rotation_rad)
    inv_rot = rot.T
    # Euler angles of the transposed matrix under the z@y@x composition
    ry = np.arcsin(-inv_rot[2, 0])
    rx = np.arctan2(inv_rot[2, 1], inv_rot[2, 2])
    rz = np.arctan2(inv_rot[1, 0], inv_rot[0, 0])
    return RigidMotion(
        translation_mm=-(inv_rot @ motion.translation_mm),
        rotation_rad=np.array([rx, ry, rz]),
    )


def _rigid_matrix_offset(shape, motion: RigidMotion, voxel):
    """ndimage (matrix, offset) in voxel units for p -> R(p - c) + c + t."""
    center_mm = (np.array(shape) - 1.0) / 2.0 * voxel
    rot = rotation_matrix(motion.rotation_rad)
    matrix = (rot * voxel[np.newaxis, :]) / voxel[:, np.newaxis]
    offset = ((np.eye(3) - rot) @ center_mm + motion.translation_mm) / voxel
    return matrix, offset


def resample_rigid(data3d: np.ndarray, motion: RigidMotion, voxel_size_mm) -> np.ndarray:
    """Resample one 3-D volume through the rigid map p -> R(p - c) + c + t.

    Coordinates are in mm with c the volume center; interpolation is
    trilinear and out-of-field samples become 0.
    """
    data3d = np.asarray(data3d, dtype=np.float64)
    voxel = np.asarray(voxel_size_mm, dtype=np.float64)
    matrix, offset = _rigid_matrix_offset(data3d.shape, motion, voxel)
    return ndimage.affine_transform(
        data3d, matrix, offset=offset, order=1, mode="constant", cval=0.0, prefilter=False
    )


class _AlignmentCost:
    """MSE between a spline-resampled volume and the reference over a
    fixed central domain.

    The moving volume is spline-prefiltered once; each evaluation then
    samples it with cubic interpolation at the rigidly-mapped positions
    of a border-eroded voxel set and averages the squared difference
    against the reference there. Scoring a domain that depends on the
    parameters (an overlap mask) lets the optimizer trade alignment for
    mask placement and biases the minimum, so the domain is pinned once;
    eroding the border keeps its samples inside the field of view for
    the motion magnitudes being estimated.
    """

    ERODE_VOX = 3
    ORDER = 3

    def __init__(self, moving, reference, voxel):
        self.filtered = ndimage.spline_filter(moving, order=self.ORDER)
        self.voxel = np.asarray(voxel, dtype=np.float64)
        self.shape = np.array(moving.shape)
        margins = [min(self.ERODE_VOX, max(0, (n - 1) // 3)) for n in moving.shape]
        domain = tuple(slice(m, n - m) for m, n in zip(margins, moving.shape))
        grids = np.meshgrid(
            *[np.arange(n, dtype=np.float64)[d] for n, d in zip(moving.shape, domain)],
            indexing="ij",
        )
        self.domain_grid = np.stack([g.ravel() for g in grids], axis=0)
        self.reference_values = reference[domain].ravel()

    def __call__(self, params):
        motion = RigidMotion.from_params(params)
        matrix, offset = _rigid_matrix_offset(self.shape, motion, self.voxel)
        coords = matrix @ self.domain_grid + offset[:, np.newaxis]
        sampled = ndimage.map_coordinates(
            self.filtered, coords, order=self.ORDER, mode="constant", cval=0.0,
            prefilter=False,
        )
        diff = sampled - self.reference_values
        cost = float(np.mean(diff * diff))
        if not np.isfinite(cost):
            raise NumericError("non-finite registration cost")
        return cost


_SIMPLEX_STEPS = np.array([1.0, 1.0, 1.0, 0.02, 0.02, 0.02])


def _initial_simplex(x0, scale=1.0):
    simplex = np.tile(x0, (7, 1))
    for i in range(6):
        simplex[i + 1, i] += _SIMPLEX_STEPS[i] * scale
    return simplex


def _translation_stage(cost, voxel):
    """Coarse translation-only simplex pass to seed the full search."""
    def translation_cost(t):
        return cost(np.concatenate([t, np.zeros(3)]))

    simplex = np.zeros((4, 3))
    for i in range(3):
        simplex[i + 1, i] = voxel[i]
    result = minimize(
        translation_cost,
        np.zeros(3),
        method="Nelder-Mead",
        options={"initial_simplex": simplex, "maxiter": 300, "xatol": 1e-3, "fatol": 1e-10},
    )
    return np.concatenate([result.x, np.zeros(3)])


def estimate_motion(vol: Volume4D, reference_index: int = 0, max_restarts: int = 3) -> list:
    """Rigid parameters aligning every volume to the reference volume.

    Minimizes the mean squared intensity difference after rigid
    resampling, scored over a fixed border-eroded domain, using
    derivative-free simplex descent: a coarse translation-only pass from
    zero motion, then the full 6-DOF search restarted from the running
    best until the cost improves by less than 1e-8 relative or the
    restart budget is spent. The reference volume gets exact identity
    parameters.
    """
    nt = vol.n_vols
    if not 0 <= reference_index < nt:
        raise ShapeError(f"reference index {reference_index} outside 0..{nt - 1}")
    reference = vol.data[..., reference_index]
    voxel = np.asarray(vol.header.voxel_size_mm, dtype=np.float64)

    estimates = []
    for i in range(nt):
        if i == reference_index:
            estimates.append(RigidMotion())
            continue
        cost = _AlignmentCost(vol.data[..., i], reference, voxel)
        best_x = np.zeros(6)
        best_cost = cost(best_x)

        seeded = _translation_stage(cost, voxel)
        seeded_cost = cost(seeded)
        if seeded_cost < best_cost:
            best_cost, best_x = seeded_cost, seeded

        scale = 1.0
        for _ in range(max_restarts + 1):
            result = minimize(
                cost,
                best_x,
                method="Nelder-Mead",
                options={
                    "initial_simplex": _initial_simplex(best_x, scale),
                    "maxiter": 200 * 6,
                    "xatol": 1e-5,
                    "fatol": 1e-12,
                },
            )
            improved = best_cost - result.fun
            if result.fun < best_cost:
                best_cost = float(result.fun)
                best_x = result.x
            if improved < 1e-8 * max(best_cost, 1e-30):
                break
            scale *= 0.25
        estimates.append(RigidMotion.from_params(best_x))
    return estimates


def apply_motion(vol: Volume4D, motion: list) -> Volume4D:
    """Realign every volume by resampling through its estimated transform.

    Identity parameters return the input data unchanged (no resampling
    pass), so an already-still series is untouched.
    """
    if len(motion) != vol.n_vols:
        raise ShapeError(f"{len(motion)} motion entries for {vol.n_vols} volumes")
    out = np.empty_like(vol.data)
    for i, m in enumerate(motion):
        if not np.any(m.params):
            out[..., i] = vol.data[..., i]
        else:
            out[..., i] = resample_rigid(vol.data[..., i], m, vol.header.voxel_size_mm)
    return Volume4D(header=vol.header, data=out)


def fwhm_to_sigma_vox(fwhm_mm: float, voxel_size_mm) -> np.ndarray:
    """Per-axis Gaussian sigma in voxels for a given FWHM in mm."""
    voxel = np.asarray(voxel_size_mm, dtype=np.float64)
    return fwhm_mm * FWHM_TO_SIGMA / voxel


def gaussian_kernel_1d(sigma_vox: float) -> np.ndarray:
    """Unit-sum Gaussian taps truncated at 4 sigma (identity for tiny sigma)."""
    radius = int(np.floor(KERNEL_TRUNCATE_SIGMAS * sigma_vox))
    if radius < 1:
        return np.array([1.0])
    taps = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma_vox) ** 2)
    return taps / taps.sum()


def gaussian_smooth(vol: Volume4D, fwhm_mm: float) -> Volume4D:
    """Separable 3-axis Gaussian smoothing with border renormalization.

    Outside-volume support is handled by dividing by the smoothed
    indicator of the field of view, so constant volumes stay constant
    all the way to the edges.
    """
    if fwhm_mm <= 0:
        raise ValueError("fwhm_mm must be positive")
    sigmas = fwhm_to_sigma_vox(fwhm_mm, vol.header.voxel_size_mm)

    data = vol.data.copy()
    support = np.ones(vol.spatial_dims, dtype=np.float64)
    for axis, sigma in enumerate(sigmas):
        kernel = gaussian_kernel_1d(sigma)
        if kernel.size == 1:
            continue
        data = ndimage.convolve1d(data, kernel, axis=axis, mode="constant", cval=0.0)
        support = ndimage.convolve1d(support, kernel, axis=axis, mode="constant", cval=0.0)
    data /= support[..., np.newaxis]
    return Volume4D(header=vol.header, data=data)


def highpass_filter(vol: Volume4D, cutoff_hz: float) -> Volume4D:
    """Remove slow drift below the cutoff from every voxel series.

    Each series is residualized against the DCT drift basis plus the
    constant, then its original mean is restored so baseline intensity
    survives. Filtering is idempotent.
    """
    nt = vol.n_vols
    if nt < 4:
        raise InsufficientDataError("high-pass filtering needs at least 4 volumes")
    basis = dct_highpass_basis(nt, vol.header.tr_seconds, cutoff_hz)
    constant = np.full((nt, 1), 1.0 / np.sqrt(nt))
    q = np.hstack([constant, basis])

    nx, ny, nz, _ = vol.header.dims
    series = vol.data.reshape(-1, nt).T  # (nt, V)
    means = series.mean(axis=0)
    filtered = series - q @ (q.T @ series) + means
    return Volume4D(header=vol.header, data=filtered.T.reshape(nx, ny, nz, nt))
