"""Brute-force and closed-form references for the test suite.

Nothing here reuses the numerical kernels of the modules it checks. All
functions refuse lattices beyond test size.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import spsolve

from .core import ComplexField, LatticeSpec, PhysicalConstants
from .errors import ArgumentError, DegenerateError, ZeroAmplitudeError

MAX_AXIS_2D = 64
MAX_BINS = 32**4


def _check_size(spec: LatticeSpec) -> None:
    if spec.axis_len > MAX_AXIS_2D or spec.nbins > MAX_BINS:
        raise ArgumentError(f"oracle refuses lattice {spec.shape}: test sizes only")


@dataclass(frozen=True)
class ReducedDensity:
    """<r|rho|r'> on a single-photon lattice, flattened row-major."""

    spec: LatticeSpec
    matrix: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.complex128)
        nb = self.spec.nbins
        if m.shape != (nb, nb):
            raise ArgumentError(f"density matrix must be {nb}x{nb}, got {m.shape}")
        scale = max(np.abs(m).max(), 1e-300)
        if np.abs(m - m.conj().T).max() > 1e-12 * scale:
            raise ArgumentError("density matrix is not Hermitian")
        if not np.trace(m).real > 0:
            raise ArgumentError("density matrix trace must be positive")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    def normalized(self) -> "ReducedDensity":
        return ReducedDensity(self.spec, self.matrix / np.trace(self.matrix).real)


def dft_direct(field: ComplexField, photon: int, cfg) -> ComplexField:
    """Lens transform as an explicit sum over every source point."""
    spec = field.spec
    _check_size(spec)
    if not cfg.ft_paths[photon]:
        raise ArgumentError(f"photon {photon} is not marked as a Fourier-lens path")
    axes = [photon * spec.dims_per_photon + d for d in range(spec.dims_per_photon)]
    lam_f = cfg.wavelength * cfg.focal_length
    coords = [spec.origin[a] + spec.pitch * np.arange(spec.axis_len) for a in axes]
    src = np.meshgrid(*coords, indexing="ij")
    vals = np.moveaxis(field.values, axes, list(range(len(axes))))
    out = np.empty_like(vals)
    cell = spec.pitch ** len(axes)
    for out_idx in itertools.product(range(spec.axis_len), repeat=len(axes)):
        phase = np.zeros(src[0].shape)
        for d, i in enumerate(out_idx):
            phase = phase + coords[d][i] * src[d]
        weight = np.exp(-2j * math.pi * phase / lam_f) * cell
        acc = np.zeros(vals.shape[len(axes):], dtype=np.complex128)
        for src_idx in itertools.product(range(spec.axis_len), repeat=len(axes)):
            acc += weight[src_idx] * vals[src_idx]
        out[out_idx] = acc
    return ComplexField(spec, np.moveaxis(out, list(range(len(axes))), axes))


def _derivative(values: np.ndarray, axis: int, pitch: float) -> np.ndarray:
    """Central difference along ``axis``: 5-point where room, 3-point next to edges.

    The outermost samples get NaN.
    """
    n = values.shape[axis]
    d = np.full(values.shape, np.nan + 0j, dtype=np.complex128)

    def take(lo, hi):
        return values[(slice(None),) * axis + (slice(lo, hi),)]

    def put(lo, hi, arr):
        d[(slice(None),) * axis + (slice(lo, hi),)] = arr

    if n >= 3:
        put(1, n - 1, (take(2, n) - take(0, n - 2)) / (2 * pitch))
    if n >= 5:
        put(2, n - 2, (-take(4, n) + 8 * take(3, n - 1) - 8 * take(1, n - 3) + take(0, n - 4)) / (12 * pitch))
    return d


def weak_value_momentum(field: ComplexField, point, photon: int, axis: int,
                        consts: PhysicalConstants = PhysicalConstants()) -> complex:
    """<p>_w = -i hbar (d psi / d x) / psi at one lattice point (kg m/s).

    ``axis`` is the transverse dim of ``photon`` (0 = x, 1 = y).
    """
    spec = field.spec
    point = tuple(int(i) for i in point)
    psi = field.values
    ax = photon * spec.dims_per_photon + axis
    if abs(psi[point]) <= 1e-12 * np.abs(psi).max():
        raise ZeroAmplitudeError(f"wave function vanishes at {point}")
    line = psi[point[:ax] + (slice(None),) + point[ax + 1:]]
    deriv = _derivative(line, 0, spec.pitch)[point[ax]]
    if np.isnan(deriv):
        raise ArgumentError(f"point {point} sits on the lattice edge along axis {ax}")
    return complex(-1j * consts.hbar * deriv / psi[point])


def weak_value_wavenumber(field: ComplexField, photon: int, axis: int) -> np.ndarray:
    """Re<p>_w / hbar over the whole lattice (rad/m); NaN on edges and zeros."""
    spec = field.spec
    ax = photon * spec.dims_per_photon + axis
    psi = field.values
    deriv = _derivative(psi, ax, spec.pitch)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = (deriv / psi).imag
    k[np.abs(psi) <= 1e-12 * np.abs(psi).max()] = np.nan
    return k


def gaussian_schell_ft_analytic(params, wavelength: float, focal_length: float, r1, r2,
                                added_phase=None, prefactor: bool = True) -> np.ndarray:
    """Continuum Fourier transform (over photon 1) of the Gaussian-Schell state.

    ``r1`` (camera) and ``r2`` are arrays whose last axis holds the transverse
    components. ``added_phase`` is an optional callable of ``r2``.
    """
    a, b = params.a, params.b
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    dims = r1.shape[-1]
    K = 2 * math.pi * r1 / (wavelength * focal_length)
    k2 = np.sum(K * K, axis=-1)
    kr = np.sum(K * r2, axis=-1)
    rr = np.sum(r2 * r2, axis=-1)
    val = np.exp(-(k2 + 4j * b * kr + 4 * a * (a + 2 * b) * rr) / (4 * (a + b)))
    if prefactor:
        val = val * (math.pi / (a + b)) ** (dims / 2)
    if added_phase is not None:
        val = val * np.exp(1j * added_phase(r2))
    return val


def reduced_density_gs(params, r, r_prime) -> np.ndarray:
    """Unnormalized <r|rho_2|r'> of the Gaussian-Schell state (photon 1 traced out)."""
    a, b = params.a, params.b
    r = np.asarray(r, dtype=float)
    rp = np.asarray(r_prime, dtype=float)
    num = 2 * a * (a + 2 * b) * (np.sum(rp * rp, -1) + np.sum(r * r, -1)) + b**2 * np.sum((rp - r) ** 2, -1)
    return np.exp(-num / (2 * (a + b)))


def reduced_density_gs_matrix(params, spec: LatticeSpec) -> ReducedDensity:
    """Closed-form reduced density sampled on a single-photon lattice."""
    _check_size(spec)
    pts = np.stack([g.ravel() for g in np.meshgrid(*[spec.coords(a) for a in range(spec.naxes)],
                                                   indexing="ij")], axis=-1)
    m = reduced_density_gs(params, pts[:, None, :], pts[None, :, :])
    return ReducedDensity(spec, m + 0j).normalized()


def partial_trace(field: ComplexField, keep: int) -> ReducedDensity:
    """rho_keep(r, r') = sum over the other photons of psi psi*, by explicit loops."""
    spec = field.spec
    _check_size(spec)
    dims = spec.dims_per_photon
    kept = list(range(keep * dims, keep * dims + dims))
    others = [a for a in range(spec.naxes) if a not in kept]
    psi = np.moveaxis(field.values, kept, list(range(dims))).reshape(spec.axis_len**dims, -1)
    nb = psi.shape[0]
    m = np.zeros((nb, nb), dtype=np.complex128)
    for col in range(psi.shape[1]):
        v = psi[:, col]
        m += np.outer(v, v.conj())
    m *= spec.pitch ** len(others)
    sub = LatticeSpec(1, dims, spec.axis_len, spec.pitch, tuple(spec.origin[a] for a in kept))
    return ReducedDensity(sub, m).normalized()


def first_order_conditional(field: ComplexField, cfg, photon: int) -> tuple[np.ndarray, np.ndarray]:
    """First-order conditional intensities (I_L, I_R), normalized to unit total.

    k_x measurement: I_{L/R} ~ A^2 (1 -/+ sin 2 l k_x), both evaluated at r - l e_y.
    k_y measurement: I_{L/R} ~ A^2 (1 +/- sin 2 l k_y), both evaluated at r + l e_x.
    Edge bins, where the finite-difference wave number is undefined, are NaN.
    """
    spec = field.spec
    s = cfg.displacement / spec.pitch
    if abs(s - round(s)) > 1e-6:
        raise ArgumentError("displacement must be a whole number of pixels")
    s = int(round(s))
    l = cfg.displacement
    ky = getattr(cfg.axis, "value", cfg.axis) == "KY"
    k = weak_value_wavenumber(field, photon, 1 if ky else 0)
    a2 = np.abs(field.values) ** 2

    def at_offset(arr):
        out = np.full(arr.shape, np.nan)
        src = [slice(None)] * spec.naxes
        dst = [slice(None)] * spec.naxes
        if spec.dims_per_photon == 2 and s:
            for j in range(spec.n):
                if ky:  # value at r + s e_x
                    ax = j * 2
                    src[ax], dst[ax] = slice(s, None), slice(0, -s)
                else:  # value at r - s e_y
                    ax = j * 2 + 1
                    src[ax], dst[ax] = slice(0, -s), slice(s, None)
        out[tuple(dst)] = arr[tuple(src)]
        return out

    a2, k = at_offset(a2), at_offset(k)
    sin = np.sin(2 * l * k)
    if ky:
        i_l, i_r = a2 * (1 + sin), a2 * (1 - sin)
    else:
        i_l, i_r = a2 * (1 - sin), a2 * (1 + sin)
    total = np.nansum(i_l) + np.nansum(i_r)
    return i_l / total, i_r / total


def zonal_reference_2d(gx: np.ndarray, gy: np.ndarray, pitch: float, mask=None) -> np.ndarray:
    """Least-squares phase from forward-difference gradients on a 2D grid.

    ``gx[i, j]`` is the slope between (i, j) and (i+1, j); ``gy`` likewise
    along the second axis. The solution has zero mean over the mask; bins
    outside the mask are NaN.
    """
    gx = np.asarray(gx, float)
    gy = np.asarray(gy, float)
    if gx.ndim != 2 or gx.shape != gy.shape:
        raise ArgumentError("gradients must be equal-shaped 2D arrays")
    if max(gx.shape) > MAX_AXIS_2D:
        raise ArgumentError("zonal reference is limited to 64x64 grids")
    mask = np.ones(gx.shape, bool) if mask is None else np.asarray(mask, bool)
    if mask.sum() < 2:
        raise DegenerateError("need at least two bins")
    _, ncomp = ndimage.label(mask)
    if ncomp != 1:
        raise DegenerateError(f"mask has {ncomp} connected components; the system is singular")
    index = -np.ones(gx.shape, dtype=np.int64)
    index[mask] = np.arange(mask.sum())
    rows, cols, vals, rhs = [], [], [], []
    eq = 0
    for g, ax in ((gx, 0), (gy, 1)):
        a = mask.copy()
        b = np.zeros_like(mask)
        if ax == 0:
            a[-1, :] = False
            b[:-1, :] = mask[1:, :]
        else:
            a[:, -1] = False
            b[:, :-1] = mask[:, 1:]
        both = a & b & np.isfinite(g)
        ii, jj = np.nonzero(both)
        ii2, jj2 = (ii + 1, jj) if ax == 0 else (ii, jj + 1)
        m = len(ii)
        r = np.arange(eq, eq + m)
        rows += [r, r]
        cols += [index[ii2, jj2], index[ii, jj]]
        vals += [np.ones(m), -np.ones(m)]
        rhs.append(g[ii, jj] * pitch)
        eq += m
    nvar = int(mask.sum())
    D = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(eq, nvar))
    # pin the first unknown to fix the gauge, then shift to zero mean
    Dp = D[:, 1:].tocsc()
    normal = (Dp.T @ Dp).tocsc()
    sol = np.concatenate([[0.0], np.atleast_1d(spsolve(normal, Dp.T @ np.concatenate(rhs)))])
    if not np.all(np.isfinite(sol)):
        raise DegenerateError("least-squares system is singular")
    out = np.full(gx.shape, np.nan)
    out[mask] = sol - sol.mean()
    return out


def finite_difference_gradient(phi: np.ndarray, axis: int, pitch: float) -> np.ndarray:
    """Forward difference (phi[i+1] - phi[i]) / pitch; last slab along ``axis`` is NaN."""
    out = np.full(phi.shape, np.nan)
    n = phi.shape[axis]
    lo = [slice(None)] * phi.ndim
    hi = [slice(None)] * phi.ndim
    lo[axis] = slice(0, n - 1)
    hi[axis] = slice(1, n)
    out[tuple(lo)] = (phi[tuple(hi)] - phi[tuple(lo)]) / pitch
    return out
