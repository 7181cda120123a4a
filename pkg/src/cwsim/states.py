"""Analytic two-photon (and n-photon) spatial states and added-phase patterns."""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .core import ComplexField, LatticeSpec, normalize
from .errors import ArgumentError, CoverageError, FormatError


@dataclass(frozen=True)
class GaussianSchellParams:
    """``a`` sets the spot size and ``b`` the position correlation, both in m^-2."""

    a: float
    b: float

    def __post_init__(self):
        if not self.a > 0:
            raise ArgumentError(f"a must be positive, got {self.a}")
        if not self.b >= 0:
            raise ArgumentError(f"b must be non-negative, got {self.b}")


@dataclass(frozen=True)
class PhasePattern:
    """Real phase samples (radians) on a raster of pixel centres.

    The raster covers ``extent = (width_m, height_m)`` centred on ``center``.
    Columns run along the first mapped coordinate (u), rows along the second
    (v). Off-centre samples are bilinearly interpolated; samples between the
    outermost pixel centre and the extent edge take the edge value.
    """

    values: np.ndarray = dc_field(repr=False)
    extent: tuple[float, float]
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.ndim == 1:
            v = v[np.newaxis, :]
        if v.ndim != 2 or v.size == 0:
            raise FormatError("phase pattern needs a non-empty 2D raster")
        if not np.all(np.isfinite(v)):
            raise ArgumentError("phase pattern values must be finite")
        if not (self.extent[0] > 0 and self.extent[1] > 0):
            raise ArgumentError(f"pattern extent must be positive, got {self.extent}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "extent", (float(self.extent[0]), float(self.extent[1])))
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        w, h = self.extent
        u = self.center[0] - w / 2 + (np.arange(self.width) + 0.5) * w / self.width
        v = self.center[1] - h / 2 + (np.arange(self.height) + 0.5) * h / self.height
        return u, v

    def covers(self, u, v, rtol: float = 1e-9) -> bool:
        w, h = self.extent
        tol_u, tol_v = rtol * w, rtol * h
        return bool(
            np.min(u) >= self.center[0] - w / 2 - tol_u and np.max(u) <= self.center[0] + w / 2 + tol_u
            and np.min(v) >= self.center[1] - h / 2 - tol_v and np.max(v) <= self.center[1] + h / 2 + tol_v
        )

    def sample(self, u, v) -> np.ndarray:
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        w, h = self.extent
        col = (u - (self.center[0] - w / 2)) * self.width / w - 0.5
        row = (v - (self.center[1] - h / 2)) * self.height / h - 0.5
        out = ndimage.map_coordinates(self.values, [row.ravel(), col.ravel()], order=1, mode="nearest")
        return out.reshape(u.shape)

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
                      extent: tuple[float, float], shape: tuple[int, int],
                      center: tuple[float, float] = (0.0, 0.0)) -> "PhasePattern":
        """Sample ``fn(u, v)`` at the pixel centres of a ``shape = (rows, cols)`` raster."""
        proto = cls(np.zeros(shape), extent, center)
        u, v = proto.pixel_centers()
        U, V = np.meshgrid(u, v)
        return cls(fn(U, V), extent, center)


def lattice_pattern_grid(spec: LatticeSpec) -> dict:
    """Extent and shape that put pattern pixel centres exactly on lattice coordinates."""
    side = spec.axis_len * spec.pitch
    centre = spec.origin[0] + (spec.axis_len - 1) * spec.pitch / 2
    return {"extent": (side, side), "shape": (spec.axis_len, spec.axis_len), "center": (centre, centre)}


def bilinear_pattern(alpha: float, **grid) -> PhasePattern:
    """phi(u, v) = alpha * u * v  (alpha in rad/m^2)."""
    return PhasePattern.from_function(lambda u, v: alpha * u * v, **grid)


def gaussian_bump_pattern(amplitude: float, width: float, offset=(0.0, 0.0), **grid) -> PhasePattern:
    u0, v0 = offset
    return PhasePattern.from_function(
        lambda u, v: amplitude * np.exp(-((u - u0) ** 2 + (v - v0) ** 2) / (2 * width**2)), **grid)


def tilt_pattern(qu: float, qv: float = 0.0, **grid) -> PhasePattern:
    return PhasePattern.from_function(lambda u, v: qu * u + qv * v, **grid)


def checkerboard_pattern(amplitude: float, squares: int, **grid) -> PhasePattern:
    extent = grid["extent"]
    center = grid.get("center", (0.0, 0.0))

    def fn(u, v):
        iu = np.floor((u - center[0] + extent[0] / 2) * squares / extent[0])
        iv = np.floor((v - center[1] + extent[1] / 2) * squares / extent[1])
        return amplitude * ((iu + iv) % 2)

    return PhasePattern.from_function(fn, **grid)


def sum_patterns(*patterns: PhasePattern) -> PhasePattern:
    first = patterns[0]
    for p in patterns[1:]:
        if p.values.shape != first.values.shape or p.extent != first.extent or p.center != first.center:
            raise ArgumentError("patterns must share raster geometry to be summed")
    return PhasePattern(sum(p.values for p in patterns), first.extent, first.center)


def read_pgm(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a binary 8-bit PGM (P5). Returns ``(image, maxval)``."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: expected binary PGM (P5), got {tokens[0]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header") from exc
    if not 0 < maxval < 256:
        raise FormatError(f"{path}: only 8-bit PGM is supported (maxval={maxval})")
    pos += 1
    raw = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos) \
        if len(data) - pos >= width * height else None
    if raw is None or width * height == 0:
        raise FormatError(f"{path}: PGM pixel data is truncated or empty")
    return raw.reshape(height, width).copy(), maxval


def write_pgm(path: str | Path, image: np.ndarray, maxval: int = 255) -> None:
    image = np.asarray(image, dtype=np.uint8)
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n{maxval}\n".encode()
    Path(path).write_bytes(header + image.tobytes())


def load_phase_pattern(image, phase_span: float, extent: tuple[float, float],
                       maxval: float | None = None, center=(0.0, 0.0)) -> PhasePattern:
    """Map grey levels ``[0, maxval]`` linearly onto ``[0, phase_span]`` radians.

    ``maxval`` defaults to the image maximum (an all-black image maps to 0).
    """
    img = np.asarray(image, dtype=np.float64)
    if img.size == 0:
        raise FormatError("empty image")
    if not math.isfinite(phase_span):
        raise ArgumentError("phase_span must be finite")
    top = float(img.max()) if maxval is None else float(maxval)
    scaled = np.zeros_like(img) if top == 0 else img * (phase_span / top)
    return PhasePattern(scaled, extent, center)


def _radius2(spec: LatticeSpec, photon: int) -> np.ndarray:
    return sum(spec.grid(a) ** 2 for a in spec.photon_axes(photon))


def _dot(spec: LatticeSpec, p: int, q: int) -> np.ndarray:
    return sum(spec.grid(a) * spec.grid(b) for a, b in zip(spec.photon_axes(p), spec.photon_axes(q)))


def make_gaussian_schell(params: GaussianSchellParams, spec: LatticeSpec) -> ComplexField:
    """exp[-a(|r1|^2 + |r2|^2) - b|r1 - r2|^2], normalized."""
    if spec.n != 2:
        raise ArgumentError(f"Gaussian-Schell state needs n=2, got n={spec.n}")
    r1, r2 = _radius2(spec, 0), _radius2(spec, 1)
    diff = r1 + r2 - 2 * _dot(spec, 0, 1)
    values = np.exp(-params.a * (r1 + r2) - params.b * diff)
    return normalize(ComplexField(spec, np.broadcast_to(values, spec.shape)))


def make_gaussian_schell_ft(params: GaussianSchellParams, spec: LatticeSpec, wavelength: float,
                            focal_length: float, ft_photon: int = 0) -> ComplexField:
    """Closed-form Gaussian-Schell state after a Fourier lens on ``ft_photon``.

    Camera coordinate r of the transformed photon maps to K = 2*pi*r/(lambda*f).
    """
    if spec.n != 2:
        raise ArgumentError(f"Gaussian-Schell state needs n=2, got n={spec.n}")
    if ft_photon not in (0, 1):
        raise ArgumentError(f"ft_photon must be 0 or 1, got {ft_photon}")
    a, b = params.a, params.b
    other = 1 - ft_photon
    scale = 2 * math.pi / (wavelength * focal_length)
    k2 = _radius2(spec, ft_photon) * scale**2
    k_dot_r = _dot(spec, ft_photon, other) * scale
    r2 = _radius2(spec, other)
    exponent = -(k2 + 4j * b * k_dot_r + 4 * a * (a + 2 * b) * r2) / (4 * (a + b))
    return normalize(ComplexField(spec, np.broadcast_to(np.exp(exponent), spec.shape)))


def make_gaussian_tilts(spec: LatticeSpec, widths: Sequence[float],
                        wavenumbers: Sequence[Sequence[float]]) -> ComplexField:
    """Product state prod_j exp(-a_j |r_j|^2 + i q_j . r_j).

    ``widths[j]`` is a_j in m^-2 (0 gives a plane wave on that photon) and
    ``wavenumbers[j]`` lists q_j per transverse axis in rad/m.
    """
    if len(widths) != spec.n or len(wavenumbers) != spec.n:
        raise ArgumentError("need one width and one wavenumber vector per photon")
    exponent = np.zeros(spec.shape, dtype=np.complex128)
    for j in range(spec.n):
        q = tuple(wavenumbers[j]) + (0.0,) * (spec.dims_per_photon - len(wavenumbers[j]))
        for d, ax in enumerate(spec.photon_axes(j)):
            exponent = exponent - widths[j] * spec.grid(ax) ** 2 + 1j * q[d] * spec.grid(ax)
    return normalize(ComplexField(spec, np.exp(exponent)))


def _check_coverage(pattern: PhasePattern, u: np.ndarray, v: np.ndarray) -> None:
    if not pattern.covers(u, v):
        raise CoverageError(
            f"pattern extent {pattern.extent} centred at {pattern.center} does not cover the lattice")


def make_phase_patterned(a: float, phi_x: PhasePattern, phi_y: PhasePattern,
                         spec: LatticeSpec) -> ComplexField:
    """exp{-a(|r1|^2 + |r2|^2) + i[phi_x(x1, x2) + phi_y(y1, y2)]}, normalized."""
    if spec.n != 2 or spec.dims_per_photon != 2:
        raise ArgumentError("phase-patterned state needs n=2 with two dims per photon")
    if not a > 0:
        raise ArgumentError(f"a must be positive, got {a}")
    x1, y1, x2, y2 = (spec.coords(i) for i in range(4))
    _check_coverage(phi_x, x1, x2)
    _check_coverage(phi_y, y1, y2)
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    Y1, Y2 = np.meshgrid(y1, y2, indexing="ij")
    px = phi_x.sample(X1, X2)[:, None, :, None]
    py = phi_y.sample(Y1, Y2)[None, :, None, :]
    amp = np.exp(-a * (_radius2(spec, 0) + _radius2(spec, 1)))
    return normalize(ComplexField(spec, amp * np.exp(1j * (px + py))))


def added_phase_values(spec: LatticeSpec, pattern: PhasePattern, photon: int,
                       axis_pair: Sequence[int] = (0, 1)) -> np.ndarray:
    """The pattern evaluated on ``photon``'s coordinates, broadcastable to the lattice."""
    if not 0 <= photon < spec.n:
        raise ArgumentError(f"photon {photon} out of range for n={spec.n}")
    axes = [spec.axis(photon, d) for d in tuple(axis_pair)[: spec.dims_per_photon]]
    u = spec.grid(axes[0])
    v = spec.grid(axes[1]) if len(axes) > 1 else np.zeros(1)
    _check_coverage(pattern, spec.coords(axes[0]),
                    spec.coords(axes[1]) if len(axes) > 1 else np.zeros(1))
    U, V = np.broadcast_arrays(u, v)
    return pattern.sample(U, V)


def apply_added_phase(field: ComplexField, pattern: PhasePattern, photon: int,
                      axis_pair: Sequence[int] = (0, 1)) -> ComplexField:
    """Multiply by exp(i phi_add) evaluated on one photon's coordinates."""
    phi = added_phase_values(field.spec, pattern, photon, axis_pair)
    if not np.any(phi):
        return field
    return field.with_values(field.values * np.exp(1j * phi))


def invert_photon(field: ComplexField, photon: int) -> ComplexField:
    """Flip r -> -r for one photon (the image inversion of a 4f relay)."""
    return field.with_values(np.flip(field.values, axis=field.spec.photon_axes(photon)))
