"""Task regressors and GLM design matrices.

A block paradigm becomes a microtime boxcar, is convolved with the
canonical double-gamma hemodynamic response, decimated to the volume
grid, and assembled with discrete-cosine drift columns, optional
confounds, and an intercept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import gamma as gamma_dist

from .errors import NumericError, OutOfRangeError, ShapeError

DEFAULT_OVERSAMPLE = 16
DEFAULT_CUTOFF_HZ = 0.005

LABEL_TASK = "task"
LABEL_DRIFT = "drift"
LABEL_CONFOUND = "confound"
LABEL_INTERCEPT = "intercept"


@dataclass(frozen=True)
class BlockDesign:
    """Block paradigm: stimulation intervals within one run.

    Onsets are strictly increasing, blocks do not overlap, and every
    block ends within the run.
    """

    onsets_s: tuple
    durations_s: tuple
    run_length_s: float

    def __post_init__(self):
        onsets = tuple(float(o) for o in self.onsets_s)
        durations = tuple(float(d) for d in self.durations_s)
        object.__setattr__(self, "onsets_s", onsets)
        object.__setattr__(self, "durations_s", durations)
        object.__setattr__(self, "run_length_s", float(self.run_length_s))
        if len(onsets) != len(durations):
            raise ShapeError("onsets and durations must have the same length")
        if self.run_length_s <= 0:
            raise ValueError("run_length_s must be positive")
        if any(o < 0 for o in onsets):
            raise ValueError("onsets must be non-negative")
        if any(d <= 0 for d in durations):
            raise ValueError("durations must be positive")
        if any(b >= a for a, b in zip(onsets[1:], onsets[:-1])):
            raise ValueError("onsets must be strictly increasing")
        for i, (o, d) in enumerate(zip(onsets, durations)):
            if o + d > self.run_length_s + 1e-9:
                raise ValueError(f"block {i} ends at {o + d} s, past run end {self.run_length_s} s")
            if i + 1 < len(onsets) and o + d > onsets[i + 1] + 1e-9:
                raise ValueError(f"block {i} overlaps block {i + 1}")


def alternating_block_design(block_s=30.0, run_length_s=300.0) -> BlockDesign:
    """Alternating task/rest blocks of equal length, task first.

    Only blocks that end within the run are emitted.
    """
    onsets = np.arange(0.0, run_length_s - block_s + 1e-9, 2.0 * block_s)
    return BlockDesign(
        onsets_s=tuple(onsets),
        durations_s=tuple(block_s for _ in onsets),
        run_length_s=run_length_s,
    )


@dataclass(frozen=True)
class HrfParams:
    """Double-gamma hemodynamic response parameters (seconds).

    The response is the gamma density at the peak delay minus the
    undershoot gamma density divided by the undershoot ratio.
    """

    peak_delay_s: float = 6.0
    undershoot_delay_s: float = 16.0
    peak_dispersion_s: float = 1.0
    undershoot_dispersion_s: float = 1.0
    undershoot_ratio: float = 6.0
    kernel_length_s: float = 32.0

    def __post_init__(self):
        if min(
            self.peak_delay_s,
            self.undershoot_delay_s,
            self.peak_dispersion_s,
            self.undershoot_dispersion_s,
            self.undershoot_ratio,
            self.kernel_length_s,
        ) <= 0:
            raise ValueError("all HRF parameters must be positive")
        if self.undershoot_delay_s <= self.peak_delay_s:
            raise ValueError("undershoot delay must exceed peak delay")
        if self.kernel_length_s < self.undershoot_delay_s:
            raise ValueError("kernel length must cover the undershoot delay")


DEFAULT_HRF = HrfParams()


@dataclass
class DesignMatrix:
    """N x P regression design with one label per column.

    Labels are drawn from {task, drift, confound, intercept}.
    rank_deficient flags a design whose columns are linearly dependent;
    fitting still proceeds via the minimum-norm solution.
    """

    values: np.ndarray
    column_labels: list
    tr_seconds: float
    rank_deficient: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError("design matrix must be 2-D")
        if self.values.shape[1] != len(self.column_labels):
            raise ShapeError("one label per design column required")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def columns_labeled(self, label: str) -> np.ndarray:
        return np.array([i for i, lab in enumerate(self.column_labels) if lab == label])


def boxcar(design: BlockDesign, tr_s: float, n_vols: int, oversample: int = 1) -> np.ndarray:
    """Sample the block paradigm on the microtime grid.

    Sample i sits at time i * tr_s / oversample and is 1 inside any block
    (half-open [onset, onset + duration)), 0 elsewhere.
    """
    if tr_s <= 0 or n_vols < 1 or oversample < 1:
        raise ValueError("tr_s, n_vols and oversample must be positive")
    window_s = n_vols * tr_s
    if window_s < design.run_length_s - tr_s:
        raise OutOfRangeError(
            f"{n_vols} volumes at TR {tr_s} s cover {window_s} s, "
            f"short of the {design.run_length_s} s run"
        )
    for onset, duration in zip(design.onsets_s, design.durations_s):
        if onset + duration > window_s + 1e-9:
            raise OutOfRangeError(
                f"block at {onset} s extends past the {window_s} s sampled window"
            )
    t = np.arange(n_vols * oversample, dtype=np.float64) * (tr_s / oversample)
    box = np.zeros(t.shape, dtype=np.float64)
    for onset, duration in zip(design.onsets_s, design.durations_s):
        box[(t >= onset) & (t < onset + duration)] = 1.0
    return box


def canonical_hrf(params: HrfParams = DEFAULT_HRF, dt_s: float = 0.1) -> np.ndarray:
    """Canonical double-gamma response sampled at 0, dt, ..., kernel length.

    The kernel is normalized to unit peak so a regression coefficient
    reads as peak response amplitude.
    """
    if dt_s <= 0:
        raise ValueError("dt_s must be positive")
    if dt_s > params.kernel_length_s:
        raise ValueError("dt_s must not exceed the kernel length")
    t = np.arange(0.0, params.kernel_length_s + dt_s * 0.5, dt_s)
    peak = gamma_dist.pdf(t, params.peak_delay_s / params.peak_dispersion_s,
                          scale=params.peak_dispersion_s)
    under = gamma_dist.pdf(t, params.undershoot_delay_s / params.undershoot_dispersion_s,
                           scale=params.undershoot_dispersion_s)
    kernel = peak - under / params.undershoot_ratio
    if not np.all(np.isfinite(kernel)):
        raise NumericError("gamma density evaluation produced non-finite values")
    top = kernel.max()
    if top <= 0:
        raise NumericError("HRF kernel has no positive lobe")
    return kernel / top


def convolve_regressor(box: np.ndarray, kernel: np.ndarray, oversample: int) -> np.ndarray:
    """Convolve a microtime boxcar with the HRF and decimate to the TR grid.

    Linear convolution is truncated to the run, then every oversample-th
    sample is kept. Mean-centering is left to the design intercept.
    """
    box = np.asarray(box, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if oversample < 1:
        raise ValueError("oversample must be a positive integer")
    if box.ndim != 1 or kernel.ndim != 1:
        raise ShapeError("boxcar and kernel must be 1-D")
    if box.size % oversample != 0:
        raise ShapeError(
            f"boxcar length {box.size} is not a whole number of volumes at oversample {oversample}"
        )
    full = np.convolve(box, kernel)[: box.size]
    return full[::oversample].copy()


def task_regressor(design: BlockDesign, tr_s: float, n_vols: int,
                   oversample: int = DEFAULT_OVERSAMPLE,
                   hrf: HrfParams = DEFAULT_HRF) -> np.ndarray:
    """Boxcar -> canonical HRF convolution -> TR grid, in one call."""
    box = boxcar(design, tr_s, n_vols, oversample)
    kernel = canonical_hrf(hrf, dt_s=tr_s / oversample)
    return convolve_regressor(box, kernel, oversample)


def dct_highpass_basis(n_vols: int, tr_s: float, cutoff_hz: float) -> np.ndarray:
    """Discrete-cosine drift columns below the cutoff frequency.

    Returns K = floor(2 * n_vols * tr_s * cutoff_hz) unit-norm columns,
    column k being cos(pi * k * (2n + 1) / (2N)); K may be zero.
    """
    if cutoff_hz <= 0:
        raise ValueError("cutoff_hz must be positive")
    if cutoff_hz >= 1.0 / (2.0 * tr_s):
        raise ValueError(f"cutoff {cutoff_hz} Hz at TR {tr_s} s is not below Nyquist")
    n = int(n_vols)
    k_max = int(np.floor(2.0 * n * tr_s * cutoff_hz))
    basis = np.empty((n, k_max), dtype=np.float64)
    grid = 2.0 * np.arange(n) + 1.0
    for k in range(1, k_max + 1):
        col = np.cos(np.pi * k * grid / (2.0 * n))
        basis[:, k - 1] = col / np.linalg.norm(col)
    return basis


def build_design_matrix(task_regs, drift, confounds, n_vols: int, tr_s: float) -> DesignMatrix:
    """Assemble columns in the order task, drift, confound, intercept.

    All inputs must have n_vols rows; a rank-deficient result is flagged
    rather than rejected (fits fall back to the minimum-norm solution).
    """
    columns = []
    labels = []
    for reg in task_regs:
        reg = np.asarray(reg, dtype=np.float64).ravel()
        if reg.size != n_vols:
            raise ShapeError(f"task regressor length {reg.size} != n_vols {n_vols}")
        columns.append(reg)
        labels.append(LABEL_TASK)
    for block, label in ((drift, LABEL_DRIFT), (confounds, LABEL_CONFOUND)):
        if block is None:
            continue
        block = np.asarray(block, dtype=np.float64)
        if block.size == 0:
            continue
        if block.ndim == 1:
            block = block[:, np.newaxis]
        if block.shape[0] != n_vols:
            raise ShapeError(f"{label} block has {block.shape[0]} rows, expected {n_vols}")
        for j in range(block.shape[1]):
            columns.append(block[:, j])
            labels.append(label)
    columns.append(np.ones(n_vols, dtype=np.float64))
    labels.append(LABEL_INTERCEPT)

    values = np.column_stack(columns)
    rank = np.linalg.matrix_rank(values)
    return DesignMatrix(
        values=values,
        column_labels=labels,
        tr_seconds=float(tr_s),
        rank_deficient=rank < values.shape[1],
    )
