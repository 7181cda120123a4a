"""Lattice geometry and field containers shared by every stage.

Axis order is ``(x1, y1, x2, y2, ...)`` for two transverse dimensions per
photon and ``(x1, x2, ...)`` for one. Arrays are stored row-major in that
order, so a flat bin index is ``numpy.ravel_multi_index(coords, spec.shape)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Mapping, Sequence

import numpy as np
from scipy import constants as sc

from .errors import ArgumentError, DegenerateFieldError

AXIS_NAMES = ("x", "y")


@dataclass(frozen=True)
class LatticeSpec:
    """Regular lattice over the joint transverse coordinates of ``n`` photons.

    ``origin`` holds the physical coordinate of index 0 along every axis. When
    omitted the lattice is centred so that r = 0 falls on (or next to) the
    middle bin.
    """

    n: int
    dims_per_photon: int
    axis_len: int
    pitch: float
    origin: tuple[float, ...] | None = None

    def __post_init__(self):
        if int(self.n) < 1:
            raise ArgumentError(f"photon count must be >= 1, got {self.n}")
        if self.dims_per_photon not in (1, 2):
            raise ArgumentError(f"dims_per_photon must be 1 or 2, got {self.dims_per_photon}")
        if int(self.axis_len) < 2:
            raise ArgumentError(f"axis_len must be >= 2, got {self.axis_len}")
        if not (self.pitch > 0 and math.isfinite(self.pitch)):
            raise ArgumentError(f"pitch must be positive, got {self.pitch}")
        if self.origin is None:
            o = -(self.axis_len - 1) * self.pitch / 2
            object.__setattr__(self, "origin", (o,) * self.naxes)
        else:
            origin = tuple(float(v) for v in self.origin)
            if len(origin) != self.naxes:
                raise ArgumentError(f"origin needs {self.naxes} entries, got {len(origin)}")
            object.__setattr__(self, "origin", origin)

    @property
    def naxes(self) -> int:
        return self.n * self.dims_per_photon

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.axis_len,) * self.naxes

    @property
    def nbins(self) -> int:
        return self.axis_len**self.naxes

    @property
    def cell_volume(self) -> float:
        return self.pitch**self.naxes

    def axis(self, photon: int, dim: int = 0) -> int:
        """Array axis holding coordinate ``dim`` (0 = x, 1 = y) of ``photon``."""
        if not 0 <= photon < self.n:
            raise ArgumentError(f"photon {photon} out of range for n={self.n}")
        if not 0 <= dim < self.dims_per_photon:
            raise ArgumentError(f"dim {dim} out of range for dims_per_photon={self.dims_per_photon}")
        return photon * self.dims_per_photon + dim

    def photon_axes(self, photon: int) -> tuple[int, ...]:
        return tuple(self.axis(photon, d) for d in range(self.dims_per_photon))

    def coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.pitch * np.arange(self.axis_len)

    def center_index(self, axis: int) -> int:
        """Index of the bin nearest to physical coordinate 0."""
        i = int(round(-self.origin[axis] / self.pitch))
        return min(max(i, 0), self.axis_len - 1)

    def grid(self, axis: int) -> np.ndarray:
        """Coordinates of ``axis`` broadcast against the full lattice shape."""
        shape = [1] * self.naxes
        shape[axis] = self.axis_len
        return self.coords(axis).reshape(shape)

    def photon_spec(self) -> "LatticeSpec":
        """Single-photon lattice with the same axis length and pitch."""
        return LatticeSpec(1, self.dims_per_photon, self.axis_len, self.pitch,
                           self.origin[: self.dims_per_photon])

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "dims_per_photon": self.dims_per_photon,
            "axis_len": self.axis_len,
            "pitch": self.pitch,
            "origin": list(self.origin),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LatticeSpec":
        origin = d.get("origin")
        return cls(int(d["n"]), int(d["dims_per_photon"]), int(d["axis_len"]),
                   float(d["pitch"]), tuple(origin) if origin is not None else None)


@dataclass(frozen=True)
class ComplexField:
    """Complex samples on a lattice. The value array is made read-only."""

    spec: LatticeSpec
    values: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.complex128, copy=True)
        if v.shape != self.spec.shape:
            raise ArgumentError(f"values shape {v.shape} does not match lattice {self.spec.shape}")
        if not np.all(np.isfinite(v)):
            raise ArgumentError("field values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def with_values(self, values) -> "ComplexField":
        return ComplexField(self.spec, values)

    @property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.values)

    def norm2(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.spec.cell_volume)


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = sc.hbar
    c: float = sc.c
    h: float = dc_field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "h", 2 * math.pi * self.hbar)

    def photon_mass(self, wavelength: float) -> float:
        """Effective photon mass h / (c * wavelength)."""
        return self.h / (self.c * wavelength)


def linear_index(coords: Sequence[int], spec: LatticeSpec) -> int:
    coords = tuple(int(c) for c in coords)
    if len(coords) != spec.naxes:
        raise ArgumentError(f"expected {spec.naxes} coordinates, got {len(coords)}")
    flat = 0
    for c in coords:
        if not 0 <= c < spec.axis_len:
            raise IndexError(f"coordinate {c} outside [0, {spec.axis_len})")
        flat = flat * spec.axis_len + c
    return flat


def unravel_index(flat: int, spec: LatticeSpec) -> tuple[int, ...]:
    flat = int(flat)
    if not 0 <= flat < spec.nbins:
        raise IndexError(f"flat index {flat} outside [0, {spec.nbins})")
    out = []
    for _ in range(spec.naxes):
        flat, c = divmod(flat, spec.axis_len)
        out.append(c)
    return tuple(reversed(out))


def _reduced_spec(spec: LatticeSpec, free: Sequence[int]) -> LatticeSpec:
    same_photon = spec.dims_per_photon == 2 and free[0] // 2 == free[1] // 2
    n, dims = (1, 2) if same_photon else (len(free), 1)
    return LatticeSpec(n, dims, spec.axis_len, spec.pitch, tuple(spec.origin[a] for a in free))


def window_slice(field: ComplexField, fixed: Mapping[int, int]) -> ComplexField:
    """Fix all but two axes at the given indices and return the 2D remainder."""
    spec = field.spec
    free = [a for a in range(spec.naxes) if a not in fixed]
    if len(free) != 2:
        raise ArgumentError(f"exactly two axes must stay free, got {len(free)}")
    index = []
    for a in range(spec.naxes):
        if a in fixed:
            i = int(fixed[a])
            if not 0 <= i < spec.axis_len:
                raise IndexError(f"fixed index {i} on axis {a} out of range")
            index.append(i)
        else:
            index.append(slice(None))
    return ComplexField(_reduced_spec(spec, free), field.values[tuple(index)])


def pattern_slice(field: ComplexField, pattern: str | Sequence[str]) -> ComplexField:
    """Slice by a coordinate pattern such as ``"x,y,x,y"`` or ``"x,0,y,0"``.

    Each entry is a free-variable label or a number (a physical coordinate in
    metres, snapped to the nearest bin). Axes sharing a label are tied
    together, which yields diagonal slices like psi(x, y, x, y).
    """
    spec = field.spec
    items = [s.strip() for s in pattern.split(",")] if isinstance(pattern, str) else list(pattern)
    if len(items) != spec.naxes:
        raise ArgumentError(f"pattern needs {spec.naxes} entries, got {len(items)}")
    labels: list[str] = []
    fixed: dict[int, int] = {}
    for a, item in enumerate(items):
        try:
            pos = float(item)
        except ValueError:
            if item not in labels:
                labels.append(item)
            continue
        fixed[a] = min(max(int(round((pos - spec.origin[a]) / spec.pitch)), 0), spec.axis_len - 1)
    if len(labels) != 2:
        raise ArgumentError(f"pattern must contain exactly two free labels, got {labels}")
    if all(items.count(lbl) == 1 for lbl in labels):
        return window_slice(field, fixed)
    i = np.arange(spec.axis_len)
    I, J = np.meshgrid(i, i, indexing="ij")
    index = []
    for a, item in enumerate(items):
        if a in fixed:
            index.append(fixed[a])
        else:
            index.append(I if item == labels[0] else J)
    first = [items.index(lbl) for lbl in labels]
    return ComplexField(_reduced_spec(spec, first), field.values[tuple(index)])


def normalize(field: ComplexField) -> ComplexField:
    total = field.norm2()
    if total == 0.0:
        raise DegenerateFieldError("cannot normalize an all-zero field")
    out = field.with_values(field.values / math.sqrt(total))
    # one refinement pass absorbs the rounding of the first division
    return out.with_values(out.values / math.sqrt(out.norm2()))


def shift_array(a: np.ndarray, shifts: Mapping[int, int], fill=0) -> np.ndarray:
    """``out[i] = a[i - s]`` along each shifted axis; vacated samples get ``fill``."""
    out = np.full_like(a, fill)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    for ax, s in shifts.items():
        s = int(s)
        n = a.shape[ax]
        if abs(s) >= n:
            return out
        if s > 0:
            src[ax], dst[ax] = slice(0, n - s), slice(s, n)
        elif s < 0:
            src[ax], dst[ax] = slice(-s, n), slice(0, n + s)
    out[tuple(dst)] = a[tuple(src)]
    return out


__all__ = [
    "AXIS_NAMES", "LatticeSpec", "ComplexField", "PhysicalConstants", "linear_index",
    "unravel_index", "window_slice", "pattern_slice", "normalize", "shift_array",
]
