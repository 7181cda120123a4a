"""Optical forward model: Fourier lens, Savart-plate displacement, polarization
projection onto circular outcomes, and Monte Carlo coincidence sampling.

Combo index convention: outcomes are ordered row-major over photons with
L = 0 and R = 1, so for two photons the combos are LL, LR, RL, RR.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .core import ComplexField, LatticeSpec, shift_array
from .errors import ArgumentError, DegenerateDistributionError, GridMismatchError

# Rows: outcome (L, R); columns: Savart branch (+ = D-displaced, - = A-displaced).
# Each row equals <L|D>, <L|A> (resp. <R|..>) up to a common phase.
CIRCULAR_PROJECTION = np.array([[1, 1j], [1j, 1]], dtype=np.complex128)


class MeasurementAxis(str, enum.Enum):
    KX = "KX"
    KY = "KY"


@dataclass(frozen=True)
class OpticalConfig:
    """Wavelength, Fourier-lens focal length and Savart displacement (metres).

    ``ft_paths[j]`` is True when photon j passes a single Fourier lens and
    False when it is relayed by a 4f system.
    """

    wavelength: float = 800e-9
    focal_length: float = 0.2
    displacement: float = 25e-6
    axis: MeasurementAxis = MeasurementAxis.KX
    ft_paths: tuple[bool, ...] = (False, False)

    def __post_init__(self):
        object.__setattr__(self, "axis", MeasurementAxis(self.axis))
        object.__setattr__(self, "ft_paths", tuple(bool(v) for v in self.ft_paths))
        if not (self.wavelength > 0 and self.focal_length > 0):
            raise ArgumentError("wavelength and focal length must be positive")
        if not self.displacement >= 0:
            raise ArgumentError(f"displacement must be non-negative, got {self.displacement}")

    def with_axis(self, axis) -> "OpticalConfig":
        return OpticalConfig(self.wavelength, self.focal_length, self.displacement, axis, self.ft_paths)

    def to_dict(self) -> dict:
        return {"wavelength": self.wavelength, "focal_length": self.focal_length,
                "displacement": self.displacement, "axis": self.axis.value,
                "ft_paths": list(self.ft_paths)}


@dataclass(frozen=True)
class IntensitySet:
    """Exact joint detection probabilities, shape ``(2**n, *lattice)``."""

    spec: LatticeSpec
    pmf: np.ndarray = dc_field(repr=False)
    axis: MeasurementAxis = MeasurementAxis.KX

    def __post_init__(self):
        p = np.asarray(self.pmf, dtype=np.float64)
        if p.shape != (2**self.spec.n,) + self.spec.shape:
            raise ArgumentError(f"pmf shape {p.shape} does not match lattice")
        p.flags.writeable = False
        object.__setattr__(self, "pmf", p)

    @property
    def combo_count(self) -> int:
        return 2**self.spec.n

    @property
    def data(self) -> np.ndarray:
        return self.pmf


@dataclass(frozen=True)
class CoincidenceHistogram:
    spec: LatticeSpec
    counts: np.ndarray = dc_field(repr=False)
    total: int
    seed: int | None = None
    axis: MeasurementAxis = MeasurementAxis.KX

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (2**self.spec.n,) + self.spec.shape:
            raise ArgumentError(f"counts shape {c.shape} does not match lattice")
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "axis", MeasurementAxis(self.axis))

    @property
    def combo_count(self) -> int:
        return 2**self.spec.n

    @property
    def data(self) -> np.ndarray:
        return self.counts


def combo_label(combo: int, n: int) -> str:
    return "".join("LR"[(combo >> (n - 1 - j)) & 1] for j in range(n))


def displacement_pixels(spec: LatticeSpec, displacement: float) -> int:
    s = displacement / spec.pitch
    if abs(s - round(s)) > 1e-6:
        raise GridMismatchError(
            f"displacement {displacement:g} m is not a whole number of {spec.pitch:g} m pixels")
    return int(round(s))


def branch_shifts(spec: LatticeSpec, cfg: OpticalConfig) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Index-space displacement (per transverse dim) of the + and - Savart branches.

    k_x measurement: l+ = (e_x + e_y) l, l- = (-e_x + e_y) l.
    k_y measurement (plates rotated by 90 degrees): l+ = -(e_x + e_y) l, l- = (-e_x + e_y) l.
    With one transverse dim per photon only the x component exists.
    """
    s = displacement_pixels(spec, cfg.displacement)
    if spec.dims_per_photon == 1:
        if cfg.axis is MeasurementAxis.KY:
            raise ArgumentError("k_y measurement needs two transverse dims per photon")
        return (s,), (-s,)
    if cfg.axis is MeasurementAxis.KX:
        return (s, s), (-s, s)
    return (-s, -s), (-s, s)


def _branch_stack(field: ComplexField, cfg: OpticalConfig) -> np.ndarray:
    """Array of shape ``(2,)*n + lattice`` with every displaced copy."""
    spec = field.spec
    plus, minus = branch_shifts(spec, cfg)
    out = np.empty((2,) * spec.n + spec.shape, dtype=np.complex128)
    for signs in itertools.product((0, 1), repeat=spec.n):
        shifts = {}
        for j, sgn in enumerate(signs):
            vec = plus if sgn == 0 else minus
            for d, ax in enumerate(spec.photon_axes(j)):
                shifts[ax] = vec[d]
        out[signs] = shift_array(field.values, shifts)
    return out


def displaced_fields(field: ComplexField, cfg: OpticalConfig) -> list[ComplexField]:
    """psi(r1 - l_{+-1}, ..., rn - l_{+-n}) for all 2**n sign choices.

    Ordered row-major over photons with + = 0 and - = 1. Samples pulled in
    from outside the lattice are zero.
    """
    stack = _branch_stack(field, cfg)
    return [ComplexField(field.spec, stack[signs])
            for signs in itertools.product((0, 1), repeat=field.spec.n)]


def joint_intensities(field: ComplexField, cfg: OpticalConfig) -> IntensitySet:
    stack = _branch_stack(field, cfg)
    n = field.spec.n
    # project every photon's branch axis onto (L, R); axis j is replaced in place
    for j in range(n):
        stack = np.moveaxis(np.tensordot(CIRCULAR_PROJECTION, stack, axes=([1], [j])), 0, j)
    pmf = (stack.real**2 + stack.imag**2).reshape((2**n,) + field.spec.shape)
    total = pmf.sum()
    if not total > 0:
        raise DegenerateDistributionError("field has no intensity inside the lattice")
    return IntensitySet(field.spec, pmf / total, cfg.axis)


def sample_coincidences(pmf: IntensitySet, total: int, seed: int) -> CoincidenceHistogram:
    """Draw ``total`` coincidence events from ``pmf`` (multinomial, exact total)."""
    total = int(total)
    if total < 1:
        raise ArgumentError(f"total must be >= 1, got {total}")
    p = np.ascontiguousarray(pmf.pmf, dtype=np.float64).ravel()
    s = p.sum()
    if not s > 0 or np.any(p < 0):
        raise DegenerateDistributionError("pmf must be non-negative with positive mass")
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(total, p / s)
    return CoincidenceHistogram(pmf.spec, counts.reshape(pmf.pmf.shape), total, seed, pmf.axis)


def _check_ft(field: ComplexField, photon: int, cfg: OpticalConfig) -> None:
    if not 0 <= photon < field.spec.n:
        raise ArgumentError(f"photon {photon} out of range")
    if photon >= len(cfg.ft_paths) or not cfg.ft_paths[photon]:
        raise ArgumentError(f"photon {photon} is not marked as a Fourier-lens path")


def _lens_kernel(coords: np.ndarray, cfg: OpticalConfig, sign: float) -> np.ndarray:
    return np.exp(sign * 2j * math.pi * np.outer(coords, coords) / (cfg.wavelength * cfg.focal_length))


def _apply_per_axis(values: np.ndarray, spec: LatticeSpec, photon: int, cfg: OpticalConfig,
                    sign: float, scale: float) -> np.ndarray:
    out = values
    for ax in spec.photon_axes(photon):
        kernel = _lens_kernel(spec.coords(ax), cfg, sign) * scale
        out = np.moveaxis(np.tensordot(kernel, out, axes=([1], [ax])), 0, ax)
    return out


def fourier_path(field: ComplexField, photon: int, cfg: OpticalConfig) -> ComplexField:
    """Single Fourier lens on one photon.

    out(r) = sum_r' in(r') exp(-2*pi*i r.r' / (lambda f)) * pitch**dims, with r
    read as the camera position of momentum K = 2*pi*r/(lambda f).
    """
    _check_ft(field, photon, cfg)
    spec = field.spec
    return field.with_values(_apply_per_axis(field.values, spec, photon, cfg, -1.0, spec.pitch))


def inverse_fourier_path(field: ComplexField, photon: int, cfg: OpticalConfig) -> ComplexField:
    """Inverse lens transform onto the same lattice.

    Exact inverse of :func:`fourier_path` when ``axis_len * pitch**2 ==
    wavelength * focal_length``; otherwise the windowed continuum inverse.
    """
    _check_ft(field, photon, cfg)
    spec = field.spec
    scale = spec.pitch / (cfg.wavelength * cfg.focal_length)
    return field.with_values(_apply_per_axis(field.values, spec, photon, cfg, +1.0, scale))


def fft_matched_pitch(axis_len: int, cfg: OpticalConfig) -> float:
    """Pitch at which the lens transform on ``axis_len`` samples is unitary up to scale."""
    return math.sqrt(cfg.wavelength * cfg.focal_length / axis_len)


def marginal_intensity_exact(rho, cfg: OpticalConfig) -> tuple[np.ndarray, np.ndarray]:
    """Single-photon (I_L, I_R) after one Savart plate, from a reduced density.

    I_{L/R}(r) ~ <r-l+|rho|r-l+> + <r-l-|rho|r-l-> -/+ i<r-l+|rho|r-l-> +/- i<r-l-|rho|r-l+>
    """
    spec = rho.spec
    m = np.asarray(rho.matrix)
    if not np.allclose(m, m.conj().T, rtol=0, atol=1e-12 * max(np.abs(m).max(), 1e-300)):
        raise ArgumentError("reduced density must be Hermitian")
    plus, minus = branch_shifts(spec, cfg)
    shape = spec.shape
    idx = np.indices(shape)

    def displaced(vec):
        src = [idx[d] - vec[d] for d in range(spec.naxes)]
        ok = np.all([(s >= 0) & (s < spec.axis_len) for s in src], axis=0)
        flat = np.ravel_multi_index([np.clip(s, 0, spec.axis_len - 1) for s in src], shape)
        return flat, ok

    fp, okp = displaced(plus)
    fm, okm = displaced(minus)
    pp = np.where(okp, m[fp, fp], 0)
    mm = np.where(okm, m[fm, fm], 0)
    pm = np.where(okp & okm, m[fp, fm], 0)
    mp = np.where(okp & okm, m[fm, fp], 0)
    i_l = (pp + mm - 1j * pm + 1j * mp).real
    i_r = (pp + mm + 1j * pm - 1j * mp).real
    i_l, i_r = np.clip(i_l, 0, None), np.clip(i_r, 0, None)
    total = i_l.sum() + i_r.sum()
    if not total > 0:
        raise DegenerateDistributionError("reduced density has no intensity inside the lattice")
    return i_l / total, i_r / total


__all__ = [
    "CIRCULAR_PROJECTION", "MeasurementAxis", "OpticalConfig", "IntensitySet", "CoincidenceHistogram",
    "combo_label", "displacement_pixels", "branch_shifts", "displaced_fields", "joint_intensities",
    "sample_coincidences", "fourier_path", "inverse_fourier_path", "fft_matched_pitch",
    "marginal_intensity_exact",
]
