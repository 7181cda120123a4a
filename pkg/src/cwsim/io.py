"""Binary artifact formats with JSON sidecars.

Every file starts with a 4-byte magic, a little-endian u16 version and the
lattice header (u32 n, u32 dims_per_photon, u32 axis_len, f64 pitch, f64
origin per axis). Payloads:

    CWSF  values as interleaved f64 (re, im), row-major
    CWSH  u32 combo_count, u64 counts row-major per combo
    CWSG  f64 displacement, u32 component count, per component
          (u32 photon, u32 dim, f64 values), u8 mask, u8 clamped per component
    CWSP  u64 reference bin (flat), u32 repeats, f64 values, u8 mask,
          u32 fill counts, f64 dispersion

The sidecar ``<file>.json`` repeats the lattice and carries metadata that
has no binary slot (seed, total, optics, offsets, statistics).
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .core import ComplexField, LatticeSpec
from .errors import FormatError
from .estimator import GradientField
from .forward import CoincidenceHistogram, MeasurementAxis
from .reconstructor import PhaseMap

VERSION = 1
_SPEC_HEAD = struct.Struct("<IIId")


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        st = struct.Struct("<" + fmt)
        return st.unpack(self.take(st.size))

    def array(self, dtype, count: int) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).astype(np.dtype(dtype).newbyteorder("="))

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(f"{self.path}: {len(self.data) - self.pos} trailing bytes")


def _header(magic: bytes, spec: LatticeSpec) -> bytes:
    return (magic + struct.pack("<H", VERSION)
            + _SPEC_HEAD.pack(spec.n, spec.dims_per_photon, spec.axis_len, spec.pitch)
            + np.asarray(spec.origin, "<f8").tobytes())


def _open(path, magic: bytes) -> tuple[_Reader, LatticeSpec]:
    rd = _Reader(Path(path).read_bytes(), path)
    got = rd.take(4)
    if got != magic:
        raise FormatError(f"{path}: expected magic {magic!r}, found {got!r}")
    (version,) = rd.unpack("H")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    n, dims, axis_len, pitch = rd.unpack("IIId")
    try:
        naxes = n * dims
        origin = tuple(float(v) for v in rd.array("f8", naxes))
        spec = LatticeSpec(n, dims, axis_len, pitch, origin)
    except (ValueError, TypeError) as exc:
        raise FormatError(f"{path}: bad lattice header ({exc})") from exc
    return rd, spec


def _write(path, payload: bytes, meta: dict, spec: LatticeSpec) -> Path:
    path = Path(path)
    path.write_bytes(payload)
    side = {"format_version": VERSION, "lattice": spec.to_dict(), **meta}
    sidecar_path(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return path


def _read_sidecar(path) -> dict:
    side = sidecar_path(path)
    return json.loads(side.read_text()) if side.exists() else {}


def write_field(path, field: ComplexField, meta: dict | None = None) -> Path:
    vals = np.ascontiguousarray(field.values, dtype="<c16")
    return _write(path, _header(b"CWSF", field.spec) + vals.tobytes(), {"kind": "field", **(meta or {})},
                  field.spec)


def read_field(path) -> ComplexField:
    rd, spec = _open(path, b"CWSF")
    vals = rd.array("c16", spec.nbins).reshape(spec.shape)
    rd.done()
    return ComplexField(spec, vals)


def write_histogram(path, hist: CoincidenceHistogram, meta: dict | None = None) -> Path:
    body = struct.pack("<I", hist.combo_count) + np.ascontiguousarray(hist.counts, "<u8").tobytes()
    side = {"kind": "histogram", "seed": hist.seed, "total": int(hist.total),
            "axis": MeasurementAxis(hist.axis).value, **(meta or {})}
    return _write(path, _header(b"CWSH", hist.spec) + body, side, hist.spec)


def read_histogram(path) -> CoincidenceHistogram:
    rd, spec = _open(path, b"CWSH")
    (combos,) = rd.unpack("I")
    if combos != 2**spec.n:
        raise FormatError(f"{path}: combo count {combos} does not match n={spec.n}")
    counts = rd.array("u8", combos * spec.nbins).astype(np.int64).reshape((combos,) + spec.shape)
    rd.done()
    side = _read_sidecar(path)
    return CoincidenceHistogram(spec, counts, int(side.get("total", counts.sum())), side.get("seed"),
                                side.get("axis", "KX"))


def write_gradient(path, grad: GradientField, meta: dict | None = None) -> Path:
    keys = grad.keys()
    parts = [struct.pack("<dI", grad.displacement, len(keys))]
    for j, d in keys:
        parts.append(struct.pack("<II", j, d))
        parts.append(np.ascontiguousarray(grad.components[(j, d)], "<f8").tobytes())
    parts.append(np.ascontiguousarray(grad.mask, "u1").tobytes())
    empty = np.zeros(grad.spec.shape, bool)
    for key in keys:
        parts.append(np.ascontiguousarray(grad.clamped.get(key, empty), "u1").tobytes())
    side = {"kind": "gradient", "offset_meta": grad.offset_meta, "clamp_stats": grad.clamp_stats(),
            "components": [f"k{j + 1}{'xy'[d]}" for j, d in keys], **(meta or {})}
    return _write(path, _header(b"CWSG", grad.spec) + b"".join(parts), side, grad.spec)


def read_gradient(path) -> GradientField:
    rd, spec = _open(path, b"CWSG")
    displacement, count = rd.unpack("dI")
    comps, keys = {}, []
    for _ in range(count):
        j, d = rd.unpack("II")
        keys.append((j, d))
        comps[(j, d)] = rd.array("f8", spec.nbins).reshape(spec.shape)
    mask = rd.array("u1", spec.nbins).reshape(spec.shape).astype(bool)
    clamped = {key: rd.array("u1", spec.nbins).reshape(spec.shape).astype(bool) for key in keys}
    rd.done()
    return GradientField(spec, comps, mask, clamped, displacement, _read_sidecar(path).get("offset_meta", {}))


def write_phase(path, pm: PhaseMap, meta: dict | None = None) -> Path:
    ref = int(np.ravel_multi_index(pm.reference_bin, pm.spec.shape))
    fill = pm.fill_counts if pm.fill_counts is not None else np.zeros(pm.spec.shape)
    disp = pm.dispersion if pm.dispersion is not None else np.zeros(pm.spec.shape)
    body = (struct.pack("<QI", ref, pm.repeats)
            + np.ascontiguousarray(pm.values, "<f8").tobytes()
            + np.ascontiguousarray(pm.mask, "u1").tobytes()
            + np.ascontiguousarray(fill, "<u4").tobytes()
            + np.ascontiguousarray(disp, "<f8").tobytes())
    m = pm.mask
    side = {"kind": "phase", "reference_bin": list(pm.reference_bin), "repeats": pm.repeats,
            "masked_bins": int(m.sum()),
            "fill_counts_min": int(np.min(fill[m])) if m.any() else 0,
            "dispersion_max": float(np.nanmax(disp[m])) if m.any() else 0.0,
            **(meta or {})}
    return _write(path, _header(b"CWSP", pm.spec) + body, side, pm.spec)


def read_phase(path) -> PhaseMap:
    rd, spec = _open(path, b"CWSP")
    ref, repeats = rd.unpack("QI")
    values = rd.array("f8", spec.nbins).reshape(spec.shape)
    mask = rd.array("u1", spec.nbins).reshape(spec.shape).astype(bool)
    fill = rd.array("u4", spec.nbins).reshape(spec.shape).astype(np.int64)
    disp = rd.array("f8", spec.nbins).reshape(spec.shape)
    rd.done()
    if ref >= spec.nbins:
        raise FormatError(f"{path}: reference bin {ref} out of range")
    ref_bin = tuple(int(i) for i in np.unravel_index(ref, spec.shape))
    return PhaseMap(spec, values, mask, ref_bin, fill, disp, int(repeats))


READERS = {b"CWSF": read_field, b"CWSH": read_histogram, b"CWSG": read_gradient, b"CWSP": read_phase}


def read_any(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic not in READERS:
        raise FormatError(f"{path}: unknown magic {magic!r}")
    return READERS[magic](path)
