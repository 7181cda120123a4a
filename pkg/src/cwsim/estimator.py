"""Phase-gradient and amplitude estimates from polarization-resolved coincidences."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import ndimage

from .core import LatticeSpec, shift_array
from .errors import ArgumentError, EmptyRoiError
from .forward import MeasurementAxis, OpticalConfig, branch_shifts, displacement_pixels


@dataclass(frozen=True)
class EstimatorParams:
    """``roi_epsilon``: intensity threshold relative to the brightest bin.

    ``clamp_policy``: ``"clip"`` keeps saturated bins (arcsin argument at
    +-1) and flags them; ``"mask"`` drops them.
    """

    roi_epsilon: float = 0.005
    clamp_policy: str = "clip"

    def __post_init__(self):
        if not 0 <= self.roi_epsilon < 1:
            raise ArgumentError(f"roi_epsilon must lie in [0, 1), got {self.roi_epsilon}")
        if self.clamp_policy not in ("clip", "mask"):
            raise ArgumentError(f"unknown clamp policy {self.clamp_policy!r}")


@dataclass(frozen=True)
class GradientComponent:
    """One phase-gradient component k_{photon, dim} in rad/m.

    ``offset`` is the evaluation shift in pixels per lattice axis: the sample
    stored at bin i describes the point i + offset. Aligned components carry
    an all-zero offset.
    """

    photon: int
    dim: int
    values: np.ndarray = dc_field(repr=False)
    mask: np.ndarray = dc_field(repr=False)
    clamped: np.ndarray = dc_field(repr=False)
    offset: tuple[int, ...] | None = None


@dataclass(frozen=True)
class GradientField:
    """All gradient components on a shared lattice, aligned to lattice points."""

    spec: LatticeSpec
    components: dict = dc_field(repr=False)  # (photon, dim) -> ndarray
    mask: np.ndarray = dc_field(repr=False)
    clamped: dict = dc_field(repr=False)  # (photon, dim) -> bool ndarray
    displacement: float = 0.0
    offset_meta: dict = dc_field(default_factory=dict)

    def keys(self):
        return sorted(self.components)

    def clamped_any(self) -> np.ndarray:
        out = np.zeros(self.spec.shape, bool)
        for c in self.clamped.values():
            out |= c
        return out

    def clamp_stats(self) -> dict:
        return {f"k{j + 1}{'xy'[d]}": int((self.clamped[(j, d)] & self.mask).sum()) if (j, d) in self.clamped else 0
                for (j, d) in self.keys()}


class FTDecision(str, enum.Enum):
    FOURIER_LENS = "FOURIER_LENS"
    FOUR_F = "FOUR_F"


@dataclass(frozen=True)
class FTRecommendation:
    decision: FTDecision
    fwhm_position: float
    fwhm_fourier: float
    equal_width_sum: float  # a + b at which both widths coincide, m^-2


def _combo_data(data) -> tuple[LatticeSpec, np.ndarray]:
    return data.spec, np.asarray(data.data)


def conditional_split(data, photon: int) -> tuple[np.ndarray, np.ndarray]:
    """Sum the combos in which ``photon`` was detected L (resp. R)."""
    spec, arr = _combo_data(data)
    if not 0 <= photon < spec.n:
        raise ArgumentError(f"photon {photon} out of range for n={spec.n}")
    arr = arr.reshape((2,) * spec.n + spec.shape)
    others = tuple(j for j in range(spec.n) if j != photon)
    summed = arr.sum(axis=others) if others else arr
    return summed[0], summed[1]


def gradient_component(I_L, I_R, l: float, params: EstimatorParams = EstimatorParams(),
                       axis=MeasurementAxis.KX, photon: int = 0,
                       spec: LatticeSpec | None = None) -> GradientComponent:
    """k = arcsin(ratio) / (2 l), ratio = (R - L)/(R + L) for k_x and (L - R)/(L + R) for k_y.

    The arcsin argument is clipped to [-1, 1]; saturated bins are flagged.
    Bins with zero total are masked out. When ``spec`` is given, the
    evaluation offset (-l e_y for k_x, +l e_x for k_y, every photon) is
    recorded in pixels.
    """
    axis = MeasurementAxis(axis)
    if not l > 0:
        raise ArgumentError(f"displacement must be positive, got {l}")
    I_L = np.asarray(I_L, dtype=np.float64)
    I_R = np.asarray(I_R, dtype=np.float64)
    if I_L.shape != I_R.shape:
        raise ArgumentError("I_L and I_R must share a shape")
    total = I_L + I_R
    diff = I_R - I_L if axis is MeasurementAxis.KX else I_L - I_R
    mask = total > 0
    ratio = np.zeros_like(total)
    np.divide(diff, total, out=ratio, where=mask)
    clamped = mask & (np.abs(ratio) >= 1.0)
    k = np.arcsin(np.clip(ratio, -1.0, 1.0)) / (2 * l)
    if params.clamp_policy == "mask":
        mask = mask & ~clamped
    k[~mask] = np.nan
    offset = None
    if spec is not None:
        offset = _evaluation_offset(spec, axis, displacement_pixels(spec, l))
    dim = 0 if axis is MeasurementAxis.KX else 1
    return GradientComponent(photon, dim, k, mask, clamped, offset)


def _evaluation_offset(spec: LatticeSpec, axis: MeasurementAxis, s: int) -> tuple[int, ...]:
    off = [0] * spec.naxes
    if spec.dims_per_photon == 2:
        for j in range(spec.n):
            if axis is MeasurementAxis.KX:
                off[spec.axis(j, 1)] = -s
            else:
                off[spec.axis(j, 0)] = s
    return tuple(off)


def align(values: np.ndarray, offset, fill=np.nan) -> np.ndarray:
    """Move samples from their evaluation points onto lattice points.

    A sample at bin i that describes point i + offset ends up at bin i + offset.
    """
    return shift_array(values, {ax: s for ax, s in enumerate(offset) if s}, fill=fill)


def amplitude_estimate(I_L, I_R) -> np.ndarray:
    return np.sqrt(np.clip(np.asarray(I_L, float) + np.asarray(I_R, float), 0, None))


def valid_support(spec: LatticeSpec, cfg: OpticalConfig) -> np.ndarray:
    """Bins whose every displaced source sample lies inside the lattice."""
    plus, minus = branch_shifts(spec, cfg)
    ok = np.ones(spec.shape, bool)
    idx = np.arange(spec.axis_len)
    for j in range(spec.n):
        for vec in (plus, minus):
            for d, ax in enumerate(spec.photon_axes(j)):
                src = idx - vec[d]
                good = (src >= 0) & (src < spec.axis_len)
                shape = [1] * spec.naxes
                shape[ax] = spec.axis_len
                ok &= good.reshape(shape)
    return ok


def _measurement_cfg(l: float, axis) -> OpticalConfig:
    return OpticalConfig(displacement=l, axis=axis)


def _largest_with(mask: np.ndarray, seed_index) -> np.ndarray:
    structure = ndimage.generate_binary_structure(mask.ndim, 1)
    labels, _ = ndimage.label(mask, structure=structure)
    lab = labels[seed_index]
    if lab == 0:
        raise EmptyRoiError("the brightest bin is not inside the ROI")
    return labels == lab


def roi_mask(hist_kx, hist_ky=None, params: EstimatorParams = EstimatorParams(),
             displacement: float | None = None) -> np.ndarray:
    """Region of interest on lattice points.

    A bin is kept when the total intensity of every supplied measurement
    exceeds ``roi_epsilon`` times that measurement's brightest bin, and
    every displaced sample feeding it lies inside the lattice. The result is
    the face-connected component holding the brightest k_x bin. Totals are
    aligned to their evaluation points first when ``displacement`` is given.
    """
    spec = hist_kx.spec
    hists = [h for h in (hist_kx, hist_ky) if h is not None]
    if any(h.spec.shape != spec.shape for h in hists):
        raise ArgumentError("measurements must share a lattice")
    keep = np.ones(spec.shape, bool)
    ref_total = None
    for h in hists:
        total = np.asarray(h.data, dtype=np.float64).sum(axis=0)
        if displacement is not None:
            s = displacement_pixels(spec, displacement)
            valid = valid_support(spec, _measurement_cfg(displacement, h.axis))
            off = _evaluation_offset(spec, MeasurementAxis(h.axis), s)
            total = align(np.where(valid, total, 0.0), off, fill=0.0)
        else:
            rim = np.zeros(spec.shape, bool)
            for ax in range(spec.naxes):
                sl = [slice(None)] * spec.naxes
                sl[ax] = slice(1, -1)
                rim_ax = np.ones(spec.shape, bool)
                rim_ax[tuple(sl)] = False
                rim |= rim_ax
            total = np.where(rim, 0.0, total)
        peak = total.max()
        if not peak > 0:
            raise EmptyRoiError("measurement has no counts inside the lattice")
        keep &= total > params.roi_epsilon * peak
        if ref_total is None:
            ref_total = total
    if not keep.any():
        raise EmptyRoiError("no bin passes the intensity threshold")
    seed = np.unravel_index(np.argmax(np.where(keep, ref_total, -np.inf)), spec.shape)
    return _largest_with(keep, seed)


@dataclass(frozen=True)
class Estimate:
    gradient: GradientField
    amplitude: np.ndarray = dc_field(repr=False)  # aligned, from the k_x measurement
    intensity: np.ndarray = dc_field(repr=False)  # amplitude**2


def estimate_gradients(hist_kx, hist_ky, displacement: float,
                       params: EstimatorParams = EstimatorParams()) -> Estimate:
    """Every gradient component, aligned to lattice points, plus the amplitude.

    ``hist_ky`` may be None when photons have a single transverse dim.
    """
    spec = hist_kx.spec
    if hist_ky is None and spec.dims_per_photon == 2:
        raise ArgumentError("a k_y measurement is needed for two transverse dims")
    mask = roi_mask(hist_kx, hist_ky, params, displacement)
    components, clamped, offsets = {}, {}, {}
    for hist in (hist_kx, hist_ky):
        if hist is None:
            continue
        for j in range(spec.n):
            I_L, I_R = conditional_split(hist, j)
            comp = gradient_component(I_L, I_R, displacement, params, hist.axis, j, spec)
            vals = align(comp.values, comp.offset)
            ok = align(comp.mask.astype(float), comp.offset, fill=0.0) > 0
            components[(j, comp.dim)] = vals
            clamped[(j, comp.dim)] = align(comp.clamped.astype(float), comp.offset, fill=0.0) > 0
            mask &= ok & np.isfinite(vals)
            offsets[MeasurementAxis(hist.axis).value] = [o * spec.pitch for o in comp.offset]
    if not mask.any():
        raise EmptyRoiError("no bin carries every gradient component")
    I_L, I_R = conditional_split(hist_kx, 0)
    off_kx = _evaluation_offset(spec, MeasurementAxis.KX, displacement_pixels(spec, displacement))
    amplitude = align(amplitude_estimate(I_L, I_R), off_kx, fill=0.0)
    intensity = amplitude**2
    seed = np.unravel_index(np.argmax(np.where(mask, intensity, -np.inf)), spec.shape)
    mask = _largest_with(mask, seed)
    meta = {"evaluation_offsets_m": offsets, "aligned": True, "sampling": "node"}
    grad = GradientField(spec, components, mask, clamped, displacement, meta)
    return Estimate(grad, amplitude, intensity)


def marginal_counts(data, photon: int) -> tuple[LatticeSpec, np.ndarray]:
    """Per-combo counts summed over every other photon's coordinates."""
    spec, arr = _combo_data(data)
    if not 0 <= photon < spec.n:
        raise ArgumentError(f"photon {photon} out of range for n={spec.n}")
    own = set(spec.photon_axes(photon))
    other_axes = tuple(1 + a for a in range(spec.naxes) if a not in own)
    return spec.photon_spec(), arr.sum(axis=other_axes)


def marginal_gradient(data, photon: int, l: float,
                      params: EstimatorParams = EstimatorParams()) -> GradientComponent:
    """Single-path gradient from marginal intensities of one measurement.

    Returned unaligned, with the evaluation offset of the single-photon lattice.
    """
    spec, marg = marginal_counts(data, photon)
    marg = marg.reshape((2,) * data.spec.n + spec.shape)
    others = tuple(j for j in range(data.spec.n) if j != photon)
    summed = marg.sum(axis=others) if others else marg
    return gradient_component(summed[0], summed[1], l, params, data.axis, photon, spec)


def conditional_fwhm(a: float, b: float, wavelength: float, focal_length: float) -> tuple[float, float]:
    """FWHM of |psi(r1 | r2=0)|^2 without and with a Fourier lens on path 1."""
    s = a + b
    w_pos = 2 * math.sqrt(math.log(2) / (2 * s))
    w_ft = 2 * math.sqrt(math.log(2) * wavelength**2 * focal_length**2 * s / 2) / math.pi
    return w_pos, w_ft


def recommend_ft(a: float, b: float, wavelength: float, focal_length: float) -> FTRecommendation:
    """Use a Fourier lens when it gives the narrower conditional distribution."""
    if not a > 0 or not b >= 0 or not wavelength > 0 or not focal_length > 0:
        raise ArgumentError("need a > 0, b >= 0 and positive optics")
    w_pos, w_ft = conditional_fwhm(a, b, wavelength, focal_length)
    decision = FTDecision.FOURIER_LENS if w_pos < w_ft else FTDecision.FOUR_F
    return FTRecommendation(decision, w_pos, w_ft, math.pi / (wavelength * focal_length))
