"""Synthetic low-field BOLD phantom with ground-truth activation masks.

Every voxel series is baseline + activation * HRF response + AR(1) noise
+ signed linear drift. All randomness comes from per-voxel Philox
(counter-based) streams keyed by (seed, voxel index), consumed along
time, so output is bit-reproducible and independent of any parallel
schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .preprocess import SliceOrder, interleaved_order
from .task_design import DEFAULT_HRF, DEFAULT_OVERSAMPLE, BlockDesign, HrfParams, task_regressor
from .volume_io import Volume4D, VolumeHeader

BASELINE = 1000.0
REFERENCE_FIELD_TESLA = 3.0

DEFAULT_DIMS = (24, 24, 21)
DEFAULT_VOXEL_MM = (3.3, 3.3, 4.8)


def field_snr_scale(field_tesla: float) -> float:
    """Linear SNR-vs-field heuristic, unit scale at 3 T.

    Deliberately simple; swap this function out for a different field
    dependence model if needed.
    """
    if field_tesla <= 0:
        raise ValueError("field strength must be positive")
    return field_tesla / REFERENCE_FIELD_TESLA


def sphere_mask(dims, center, radius_vox: float) -> np.ndarray:
    grids = np.ogrid[tuple(slice(0, d) for d in dims)]
    dist2 = sum((g - c) ** 2 for g, c in zip(grids, center))
    return dist2 <= radius_vox**2


def default_target_rois(dims) -> dict:
    """Two disjoint spherical activation targets.

    'motor' sits dorsally (upper slices), 'visual' posteriorly, echoing
    the tasks the toolkit is meant to analyze.
    """
    nx, ny, nz = dims
    radius = max(2.0, min(dims) / 6.0)
    motor = sphere_mask(dims, (nx * 0.5, ny * 0.5, nz * 0.75), radius)
    visual = sphere_mask(dims, (nx * 0.5, ny * 0.2, nz * 0.35), radius)
    visual &= ~motor
    return {"motor": motor, "visual": visual}


@dataclass
class PhantomSpec:
    """Geometry, activation targets, and noise model of the phantom.

    The default cnr is calibrated so a default single run (100 volumes,
    TR 3 s, 30 s alternating blocks) yields a mean in-ROI t of about 9,
    and a two-run concatenation about 12.7.
    """

    dims: tuple = DEFAULT_DIMS
    voxel_size_mm: tuple = DEFAULT_VOXEL_MM
    target_rois: dict = None
    cnr: float = 10.75
    noise_sigma: float = 20.0
    ar1_rho: float = 0.3
    drift_amplitude: float = 10.0  # intensity units per 100 volumes
    field_tesla: float = 0.55
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise ValueError(f"dims must be three positive integers, got {self.dims}")
        self.voxel_size_mm = tuple(float(v) for v in self.voxel_size_mm)
        if self.cnr < 0:
            raise ValueError("cnr must be non-negative")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be positive")
        if not 0.0 <= self.ar1_rho < 1.0:
            raise ValueError("ar1_rho must lie in [0, 1)")
        if self.drift_amplitude < 0:
            raise ValueError("drift_amplitude must be non-negative")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        self.seed = int(self.seed)
        if self.target_rois is None:
            self.target_rois = default_target_rois(self.dims)
        occupancy = np.zeros(self.dims, dtype=np.int64)
        for name, mask in self.target_rois.items():
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != self.dims:
                raise ShapeError(f"ROI '{name}' shape {mask.shape} != phantom dims {self.dims}")
            self.target_rois[name] = mask
            occupancy += mask
        if np.any(occupancy > 1):
            raise ValueError("target ROIs must be disjoint")

    def target_mask(self) -> np.ndarray:
        combined = np.zeros(self.dims, dtype=bool)
        for mask in self.target_rois.values():
            combined |= mask
        return combined


@dataclass
class AcquisitionParams:
    """Sampling parameters of one run. te_ms is carried as metadata only."""

    tr_s: float = 3.0
    te_ms: float = 85.0
    n_vols: int = 100
    slice_order: SliceOrder = field(default=None)

    def __post_init__(self):
        if self.tr_s <= 0:
            raise ValueError("tr_s must be positive")
        if self.n_vols < 4:
            raise ValueError("n_vols must be at least 4")


def _voxel_noise_block(seed: int, run_index: int, n_voxels: int, n_draws: int) -> np.ndarray:
    """(n_voxels, n_draws) standard normals from per-voxel Philox streams.

    The 128-bit stream key packs seed, run, and voxel index into disjoint
    bit fields so no two (seed, run, voxel) triples share a stream.
    """
    if not 0 <= run_index < 2**16:
        raise ValueError("run_index must fit in 16 bits")
    if n_voxels >= 2**48:
        raise ValueError("voxel count exceeds the stream key space")
    out = np.empty((n_voxels, n_draws), dtype=np.float64)
    base = (seed << 64) | (run_index << 48)
    for v in range(n_voxels):
        stream = np.random.Generator(np.random.Philox(key=base | v))
        out[v] = stream.standard_normal(n_draws)
    return out


def generate_phantom(
    spec: PhantomSpec,
    acq: AcquisitionParams,
    design: BlockDesign,
    run_index: int = 0,
    hrf: HrfParams = DEFAULT_HRF,
    oversample: int = DEFAULT_OVERSAMPLE,
) -> tuple[Volume4D, dict]:
    """Simulate one run and return it with its ground-truth ROI masks.

    The activation time course is the HRF-convolved task boxcar rescaled
    to unit peak, so cnr * noise_sigma * field_snr_scale is the peak
    signal amplitude inside target ROIs. run_index offsets the random
    streams so multi-run sets are mutually independent at equal seeds.
    """
    nx, ny, nz = spec.dims
    nt = acq.n_vols
    n_voxels = nx * ny * nz

    response = task_regressor(design, acq.tr_s, nt, oversample=oversample, hrf=hrf)
    peak = np.abs(response).max()
    if peak > 0:
        response = response / peak
    amplitude = spec.cnr * spec.noise_sigma * field_snr_scale(spec.field_tesla)

    # Per-voxel stream layout: draw 0 sets the drift sign, draws 1..nt
    # are the AR(1) innovations.
    draws = _voxel_noise_block(spec.seed, run_index, n_voxels, nt + 1)
    drift_sign = np.where(draws[:, 0] >= 0.0, 1.0, -1.0)
    innovations = draws[:, 1:]

    rho = spec.ar1_rho
    noise = np.empty_like(innovations)
    noise[:, 0] = innovations[:, 0] * spec.noise_sigma
    if rho > 0.0:
        step = spec.noise_sigma * np.sqrt(1.0 - rho**2)
        for t in range(1, nt):
            noise[:, t] = rho * noise[:, t - 1] + step * innovations[:, t]
    else:
        noise[:, 1:] = innovations[:, 1:] * spec.noise_sigma

    ramp = np.arange(nt, dtype=np.float64) / 100.0
    series = BASELINE + noise + (drift_sign[:, np.newaxis] * spec.drift_amplitude) * ramp

    # Volume layout is x-fastest, matching the canonical scan order used
    # for voxel stream keys.
    amplitude_map = np.where(spec.target_mask(), amplitude, 0.0)
    data = series.reshape((nx, ny, nz, nt), order="F")
    data = data + amplitude_map[..., np.newaxis] * response

    header = VolumeHeader(
        dims=(nx, ny, nz, nt),
        voxel_size_mm=spec.voxel_size_mm,
        tr_seconds=acq.tr_s,
    )
    truth = {name: mask.copy() for name, mask in spec.target_rois.items()}
    return Volume4D(header=header, data=data), truth


def default_slice_order(nz: int) -> SliceOrder:
    return interleaved_order(nz)
