"""Oracle cross-checks sized to a pipeline config, reported row by row."""

from __future__ import annotations

import json
import math
import time
from pathlib import Path

import numpy as np
from scipy import stats

from .core import ComplexField, LatticeSpec, normalize
from .errors import CWSError
from .estimator import GradientField, estimate_gradients, recommend_ft
from .forward import (IntensitySet, MeasurementAxis, OpticalConfig, displacement_pixels, fft_matched_pitch,
                      fourier_path, inverse_fourier_path, joint_intensities, sample_coincidences)
from .oracle import dft_direct, finite_difference_gradient, zonal_reference_2d
from .pipeline import build_spec, decide_ft, format_tsv
from .reconstructor import ReconParams, integrate_phase
from .render import save_check_figure
from .states import GaussianSchellParams, make_gaussian_schell, make_gaussian_tilts

COLUMNS = ("check", "status", "measured", "threshold", "detail", "seconds")


def _row(check, ok, measured, threshold, detail="", status=None):
    return {"check": check, "status": status or ("pass" if ok else "fail"), "measured": measured,
            "threshold": threshold, "detail": detail}


def _rel_l2(a, b) -> float:
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def check_width_anchor(cfg):
    opt = cfg["optics"]
    lam, f = float(opt["wavelength"]), float(opt["focal_length"])
    a = float(cfg["state"].get("a", 1e6))
    b = max(math.pi / (lam * f) - a, 0.0)
    rec = recommend_ft(a, b, lam, f)
    gap = abs(rec.fwhm_position - rec.fwhm_fourier)
    return _row("width_equality", gap < 1e-9, gap, 1e-9,
                f"FWHM {rec.fwhm_position * 1e6:.2f} um at a+b={rec.equal_width_sum * 1e-6:.3f} mm^-2")


def check_ft_direct(cfg, rng):
    opt = cfg["optics"]
    optics = OpticalConfig(float(opt["wavelength"]), float(opt["focal_length"]), float(opt["displacement"]),
                           ft_paths=(True, False))
    spec = LatticeSpec(2, 1, 16, float(cfg["lattice"]["pitch"]))
    field = ComplexField(spec, rng.normal(size=spec.shape) + 1j * rng.normal(size=spec.shape))
    err = _rel_l2(fourier_path(field, 0, optics).values, dft_direct(field, 0, optics).values)
    return _row("ft_vs_direct_sum", err < 1e-10, err, 1e-10)


def check_ft_round_trip(cfg, rng):
    opt = cfg["optics"]
    optics = OpticalConfig(float(opt["wavelength"]), float(opt["focal_length"]), float(opt["displacement"]),
                           ft_paths=(True, False))
    n = 16
    spec = LatticeSpec(2, 1, n, fft_matched_pitch(n, optics))
    field = ComplexField(spec, rng.normal(size=spec.shape) + 1j * rng.normal(size=spec.shape))
    back = inverse_fourier_path(fourier_path(field, 0, optics), 0, optics)
    err = _rel_l2(back.values, field.values)
    return _row("ft_round_trip", err < 1e-10, err, 1e-10, f"pitch {spec.pitch * 1e6:.2f} um")


def check_tilt(cfg):
    pitch, l = float(cfg["lattice"]["pitch"]), float(cfg["optics"]["displacement"])
    spec = LatticeSpec(2, 2, 12, pitch)
    displacement_pixels(spec, l)
    k0 = 0.25 / l
    field = make_gaussian_tilts(spec, [0.0, 1.0 / (3 * pitch) ** 2], [[k0, 0.0], [0.0, 0.0]])
    optics = OpticalConfig(displacement=l)
    kx = joint_intensities(field, optics)
    ky = joint_intensities(field, optics.with_axis(MeasurementAxis.KY))
    est = estimate_gradients(kx, ky, l)
    k = est.gradient.components[(0, 0)][est.gradient.mask]
    err = float(np.max(np.abs(k - k0)) / k0)
    return _row("tilt_exactness", err < 5e-3, err, 5e-3, f"k0={k0:.4g} rad/m, 2lk0=0.5")


def check_integrator(cfg):
    spec = LatticeSpec(2, 2, 8, float(cfg["lattice"]["pitch"]))
    g = [spec.grid(a) / spec.pitch for a in range(4)]
    phi = np.broadcast_to(0.3 * g[0] * g[2] + 0.2 * g[1] - 0.1 * g[3] ** 2, spec.shape)
    comps = {(j, d): finite_difference_gradient(phi, spec.axis(j, d), spec.pitch)
             for j in range(2) for d in range(2)}
    grad = GradientField(spec, comps, np.ones(spec.shape, bool), {})
    inten = np.exp(-sum(x**2 for x in g) / 8) * np.ones(spec.shape)
    worst = 0.0
    for workers in (1, 4):
        pm = integrate_phase(grad, inten, ReconParams(repeats=3, workers=workers, seed=7))
        worst = max(worst, float(np.sqrt(np.mean((pm.values - (phi - phi[pm.reference_bin])) ** 2))))
    return _row("integrator_exactness", worst < 1e-9, worst, 1e-9, "workers 1 and 4")


def check_zonal(cfg):
    n, pitch = 16, float(cfg["lattice"]["pitch"])
    spec = LatticeSpec(1, 2, n, pitch)
    x, y = spec.grid(0) / pitch, spec.grid(1) / pitch
    phi = np.broadcast_to(np.sin(0.3 * x) + 0.05 * x * y, spec.shape)
    gx = finite_difference_gradient(phi, 0, pitch)
    gy = finite_difference_gradient(phi, 1, pitch)
    zon = zonal_reference_2d(gx, gy, pitch)
    grad = GradientField(spec, {(0, 0): gx, (0, 1): gy}, np.ones(spec.shape, bool), {})
    pm = integrate_phase(grad, np.ones(spec.shape), ReconParams(repeats=2))
    line = pm.values - pm.values.mean()
    err = float(np.sqrt(np.mean((line - zon) ** 2)))
    return _row("line_vs_zonal", err < 1e-9, err, 1e-9)


def check_sampling(cfg):
    spec = LatticeSpec(1, 2, 16, 1.0)
    pmf = IntensitySet(spec, np.full((2,) + spec.shape, 1.0 / (2 * spec.nbins)))
    total = 10**5
    h1 = sample_coincidences(pmf, total, 11)
    h2 = sample_coincidences(pmf, total, 11)
    expected = total / h1.counts.size
    chi2 = float(np.sum((h1.counts - expected) ** 2) / expected)
    limit = float(stats.chi2.ppf(0.999, h1.counts.size - 1))
    same = bool(np.array_equal(h1.counts, h2.counts))
    return [_row("sampling_chi_square", chi2 < limit, chi2, limit, f"{h1.counts.size} bins"),
            _row("sampling_determinism", same, int(same), 1, "same seed, same histogram")]


def check_global_phase(cfg):
    spec = LatticeSpec(2, 2, 10, float(cfg["lattice"]["pitch"]))
    field = make_gaussian_schell(GaussianSchellParams(1.0 / (4 * spec.pitch) ** 2, 0.5 / (4 * spec.pitch) ** 2),
                                 spec)
    optics = OpticalConfig(displacement=spec.pitch)
    a = joint_intensities(field, optics).pmf
    b = joint_intensities(field.with_values(field.values * np.exp(0.7j)), optics).pmf
    diff = float(np.max(np.abs(a - b)))
    return _row("global_phase_invariance", diff < 1e-12, diff, 1e-12)


def check_weak_condition(cfg):
    state = cfg["state"]
    if state["preset"] != "gaussian_schell" or float(state.get("b", 0)) <= 0:
        return _row("weak_measurement_condition", True, 0.0, 0.0, "no position correlation", status="pass")
    spec = build_spec(cfg)
    ft_paths, _ = decide_ft(cfg, spec)
    l, b = float(cfg["optics"]["displacement"]), float(state["b"])
    limit = math.sqrt(2 / b)
    if any(ft_paths):
        return _row("weak_measurement_condition", True, l, limit, "Fourier lens in place", status="pass")
    ok = l <= limit
    return _row("weak_measurement_condition", ok, l, limit,
                "ok" if ok else "weak-measurement condition violated: l > sqrt(2/b) without a Fourier lens",
                status="pass" if ok else "warn")


def check_roi(cfg):
    kind = (cfg.get("validate") or {}).get("synthetic_mask")
    spec = LatticeSpec(1, 2, 12, 1.0)
    mask = np.zeros(spec.shape, bool)
    if kind == "disconnected":
        mask[1:4, 1:4] = True
        mask[7:10, 7:10] = True
    else:
        mask[2:10, 2:10] = True
    grad = GradientField(spec, {(0, 0): np.zeros(spec.shape), (0, 1): np.zeros(spec.shape)}, mask, {})
    try:
        integrate_phase(grad, mask.astype(float), ReconParams(repeats=1))
    except CWSError as exc:
        return _row("roi_connectivity", False, 0, 1, f"{type(exc).__name__}: {exc}")
    return _row("roi_connectivity", True, 1, 1, f"synthetic mask: {kind or 'connected'}")


def check_normalize(cfg, rng):
    spec = LatticeSpec(2, 1, 8, float(cfg["lattice"]["pitch"]))
    f = normalize(ComplexField(spec, rng.normal(size=spec.shape) + 1j * rng.normal(size=spec.shape)))
    dev = float(np.max(np.abs(normalize(f).values - f.values)) / np.max(np.abs(f.values)))
    return _row("normalize_idempotent", dev < 1e-15, dev, 1e-15)


def check_grid(cfg):
    spec = build_spec(cfg)
    s = displacement_pixels(spec, float(cfg["optics"]["displacement"]))
    return _row("displacement_on_grid", True, s, 1, f"l = {s} pixel(s)")


def run_validation(cfg: dict) -> list[dict]:
    rng = np.random.default_rng(int(cfg["sampling"].get("seed", 0)))
    checks = [
        ("displacement_on_grid", lambda: check_grid(cfg)),
        ("width_equality", lambda: check_width_anchor(cfg)),
        ("ft_vs_direct_sum", lambda: check_ft_direct(cfg, rng)),
        ("ft_round_trip", lambda: check_ft_round_trip(cfg, rng)),
        ("tilt_exactness", lambda: check_tilt(cfg)),
        ("integrator_exactness", lambda: check_integrator(cfg)),
        ("line_vs_zonal", lambda: check_zonal(cfg)),
        ("sampling", lambda: check_sampling(cfg)),
        ("global_phase_invariance", lambda: check_global_phase(cfg)),
        ("normalize_idempotent", lambda: check_normalize(cfg, rng)),
        ("weak_measurement_condition", lambda: check_weak_condition(cfg)),
        ("roi_connectivity", lambda: check_roi(cfg)),
    ]
    rows = []
    for name, fn in checks:
        t = time.perf_counter()
        try:
            out = fn()
        except CWSError as exc:
            out = _row(name, False, float("nan"), float("nan"), f"{type(exc).__name__}: {exc}", status="error")
        dt = time.perf_counter() - t
        for r in out if isinstance(out, list) else [out]:
            r["seconds"] = round(dt, 3)
            rows.append(r)
    return rows


def write_report(rows: list[dict], outdir) -> dict:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    tsv = format_tsv([COLUMNS] + [tuple(r.get(c, "") for c in COLUMNS) for r in rows])
    (outdir / "report.tsv").write_text(tsv)
    (outdir / "report.json").write_text(json.dumps(rows, indent=2) + "\n")
    save_check_figure(outdir / "report.png", rows)
    return {"tsv": str(outdir / "report.tsv"), "json": str(outdir / "report.json"),
            "figure": str(outdir / "report.png"), "text": tsv}
