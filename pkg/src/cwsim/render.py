"""Domain-coloured renders of complex slices (PPM) and report figures (PNG)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import hsv_to_rgb  # noqa: E402

from .core import ComplexField  # noqa: E402
from .errors import ArgumentError, FormatError  # noqa: E402


def complex_to_rgb(values, hue_offset: float = 0.0) -> np.ndarray:
    """Hue from (phase + offset) mod 2 pi, value from |v| / max|v|; uint8 RGB."""
    v = np.asarray(values, dtype=np.complex128)
    if v.ndim != 2:
        raise ArgumentError(f"need a 2D slice, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ArgumentError("slice values must be finite")
    amp = np.abs(v)
    peak = amp.max()
    bright = amp / peak if peak > 0 else np.zeros_like(amp)
    hue = np.mod(np.angle(v) + hue_offset, 2 * np.pi) / (2 * np.pi)
    hsv = np.stack([hue, np.ones_like(hue), bright], axis=-1)
    return np.round(hsv_to_rgb(hsv) * 255).astype(np.uint8)


def render_complex(slice_: ComplexField | np.ndarray, hue_offset: float = 0.0) -> np.ndarray:
    """RGB raster of a 2D slice; the first slice axis runs down the rows."""
    values = slice_.values if isinstance(slice_, ComplexField) else slice_
    return complex_to_rgb(values, hue_offset)


def write_ppm(path, rgb: np.ndarray) -> Path:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ArgumentError("PPM needs an (rows, cols, 3) array")
    path = Path(path)
    path.write_bytes(b"P6\n%d %d\n255\n" % (rgb.shape[1], rgb.shape[0]) + rgb.tobytes())
    return path


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise FormatError(f"{path}: only 8-bit binary PPM (P6) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    body = data[pos + 1:]
    if len(body) != w * h * 3:
        raise FormatError(f"{path}: expected {w * h * 3} pixel bytes, found {len(body)}")
    return np.frombuffer(body, np.uint8).reshape(h, w, 3).copy()


def save_slice_figure(path, panels: list[tuple[str, np.ndarray]], extent_mm: float | None = None,
                      hue_offset: float = 0.0, dpi: int = 110) -> Path:
    """Grid of domain-coloured panels, each normalized on its own."""
    if not panels:
        raise ArgumentError("no panels to draw")
    cols = min(3, len(panels))
    rows = -(-len(panels) // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 3.2 * rows), squeeze=False)
    ext = None if extent_mm is None else (-extent_mm / 2, extent_mm / 2, extent_mm / 2, -extent_mm / 2)
    for ax, (title, values) in zip(axes.flat, panels):
        ax.imshow(complex_to_rgb(values, hue_offset), extent=ext, interpolation="nearest")
        ax.set_title(title, fontsize=9)
        if ext is None:
            ax.set_axis_off()
        else:
            ax.tick_params(labelsize=7)
    for ax in list(axes.flat)[len(panels):]:
        ax.set_axis_off()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
    return path


def save_check_figure(path, rows: list[dict], dpi: int = 110) -> Path:
    """Bar chart of validation checks: measured value over threshold, coloured by outcome."""
    if not rows:
        raise ArgumentError("no checks to draw")
    names = [r["check"] for r in rows]
    ratio = []
    for r in rows:
        m, t = r.get("measured"), r.get("threshold")
        ratio.append(float(m) / float(t) if isinstance(m, (int, float)) and isinstance(t, (int, float)) and t
                     else (1.0 if r["status"] == "pass" else 2.0))
    colors = {"pass": "tab:green", "fail": "tab:red", "warn": "tab:orange"}
    fig, ax = plt.subplots(figsize=(7, 0.35 * len(rows) + 1.2))
    ax.barh(names, ratio, color=[colors.get(r["status"], "tab:gray") for r in rows])
    ax.axvline(1.0, color="k", lw=0.8)
    ax.set_xscale("symlog", linthresh=1e-3)
    ax.set_xlabel("measured / threshold")
    ax.invert_yaxis()
    ax.tick_params(labelsize=7)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
    return path
