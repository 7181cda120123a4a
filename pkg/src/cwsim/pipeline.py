"""Config-driven end-to-end runs: state, optics, sampling, estimation,
reconstruction, inverse transform, serialization and reports."""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import io as cwsio
from .config import load_config
from .core import ComplexField, LatticeSpec, normalize, pattern_slice
from .errors import ArgumentError, CWSError, ConfigError, StageError
from .estimator import EstimatorParams, FTDecision, estimate_gradients, recommend_ft
from .forward import (MeasurementAxis, OpticalConfig, fourier_path, joint_intensities,
                      sample_coincidences)
from .reconstructor import ReconParams, assemble_wavefunction, integrate_phase, inverse_fourier
from .render import render_complex, save_slice_figure, write_ppm
from .states import (GaussianSchellParams, PhasePattern, added_phase_values, apply_added_phase,
                     bilinear_pattern, checkerboard_pattern, gaussian_bump_pattern, invert_photon,
                     lattice_pattern_grid, load_phase_pattern, make_gaussian_schell,
                     make_gaussian_schell_ft, make_gaussian_tilts, make_phase_patterned, read_pgm,
                     sum_patterns, tilt_pattern)


def build_spec(cfg: dict) -> LatticeSpec:
    lat = cfg["lattice"]
    return LatticeSpec(lat["n"], lat["dims_per_photon"], lat["axis_len"], float(lat["pitch"]),
                       tuple(lat["origin"]) if lat.get("origin") is not None else None)


def build_pattern(pcfg: dict, spec: LatticeSpec) -> PhasePattern:
    """Pattern sampled on the lattice coordinates of one photon."""
    grid = lattice_pattern_grid(spec)
    kind = pcfg.get("kind")
    if kind == "bilinear":
        return bilinear_pattern(float(pcfg["alpha"]), **grid)
    if kind == "bump":
        return gaussian_bump_pattern(float(pcfg["amplitude"]), float(pcfg["width"]),
                                     tuple(pcfg.get("offset", (0.0, 0.0))), **grid)
    if kind == "tilt":
        return tilt_pattern(float(pcfg.get("qu", 0.0)), float(pcfg.get("qv", 0.0)), **grid)
    if kind == "checkerboard":
        return checkerboard_pattern(float(pcfg["amplitude"]), int(pcfg["squares"]), **grid)
    if kind == "zero":
        return PhasePattern.from_function(lambda u, v: 0 * u, **grid)
    if kind == "pgm":
        img, maxval = read_pgm(pcfg["path"])
        extent = tuple(pcfg.get("extent", grid["extent"]))
        return load_phase_pattern(img, float(pcfg.get("phase_span", 2 * math.pi)), extent, maxval,
                                  tuple(pcfg.get("center", (0.0, 0.0))))
    if kind == "sum":
        return sum_patterns(*(build_pattern(t, spec) for t in pcfg["terms"]))
    raise ConfigError(f"unknown pattern kind {kind!r}")


def decide_ft(cfg: dict, spec: LatticeSpec):
    """Per-photon lens flags and the recommendation behind an AUTO choice."""
    opt, state = cfg["optics"], cfg["state"]
    mode = str(opt.get("ft", "AUTO")).upper()
    photon = int(opt.get("ft_photon", 0))
    rec = None
    if mode == "AUTO":
        a = float(state.get("a", 0.0)) if state["preset"] in ("gaussian_schell", "phase_patterned") else 0.0
        b = float(state.get("b", 0.0)) if state["preset"] == "gaussian_schell" else 0.0
        if a > 0:
            rec = recommend_ft(a, b, float(opt["wavelength"]), float(opt["focal_length"]))
            mode = "FOURIER" if rec.decision is FTDecision.FOURIER_LENS else "FOUR_F"
        else:
            mode = "FOUR_F"
    flags = [False] * spec.n
    if mode == "FOURIER":
        if not 0 <= photon < spec.n:
            raise ConfigError(f"optics.ft_photon {photon} out of range")
        flags[photon] = True
    return tuple(flags), rec


def build_optics(cfg: dict, ft_paths) -> OpticalConfig:
    opt = cfg["optics"]
    return OpticalConfig(float(opt["wavelength"]), float(opt["focal_length"]), float(opt["displacement"]),
                         MeasurementAxis.KX, tuple(ft_paths))


@dataclass
class StateBundle:
    """Camera-plane state plus the ground truth in the plane of the final result."""

    camera: ComplexField
    truth: ComplexField
    truth_phase: np.ndarray | None = None  # unwrapped, broadcastable to the lattice
    notes: dict = dc_field(default_factory=dict)


def build_state(cfg: dict, spec: LatticeSpec, optics: OpticalConfig) -> StateBundle:
    st = cfg["state"]
    preset = st["preset"]
    ft_photons = [j for j, f in enumerate(optics.ft_paths) if f]
    phase = np.zeros((1,) * spec.naxes)
    notes: dict = {"preset": preset}
    if preset == "zero":
        truth = normalize(ComplexField(spec, np.zeros(spec.shape)))
    elif preset == "gaussian_schell":
        params = GaussianSchellParams(float(st["a"]), float(st["b"]))
        truth = make_gaussian_schell(params, spec)
    elif preset == "phase_patterned":
        px, py = build_pattern(st["phi_x"], spec), build_pattern(st["phi_y"], spec)
        truth = make_phase_patterned(float(st["a"]), px, py, spec)
        x1, y1, x2, y2 = (spec.grid(i) for i in range(4))
        phase = px.sample(*np.broadcast_arrays(x1, x2)) + py.sample(*np.broadcast_arrays(y1, y2))
    elif preset == "gaussian_tilts":
        widths = [float(w) for w in st["widths"]]
        waves = [[float(q) for q in qs] for qs in st["wavenumbers"]]
        truth = make_gaussian_tilts(spec, widths, waves)
        for j, qs in enumerate(waves):
            for d, ax in enumerate(spec.photon_axes(j)):
                if d < len(qs):
                    phase = phase + qs[d] * spec.grid(ax)
    else:
        raise ConfigError(f"unknown state preset {preset!r}")
    for j in st.get("invert_photons") or []:
        truth = invert_photon(truth, int(j))
        phase = np.flip(np.broadcast_to(phase, spec.shape), axis=spec.photon_axes(int(j)))
    added = st.get("added_phase")
    if added:
        photon = int(added.get("photon", 1))
        pattern = build_pattern(added["pattern"], spec)
        if photon in ft_photons:
            raise ConfigError("added_phase on a Fourier-lens path is not supported")
        truth = apply_added_phase(truth, pattern, photon)
        phase = phase + added_phase_values(spec, pattern, photon)
    camera = truth
    if ft_photons:
        analytic = preset == "gaussian_schell" and st.get("ft_method", "analytic") == "analytic"
        if analytic and len(ft_photons) == 1 and not st.get("invert_photons"):
            params = GaussianSchellParams(float(st["a"]), float(st["b"]))
            camera = make_gaussian_schell_ft(params, spec, optics.wavelength, optics.focal_length,
                                             ft_photons[0])
            if added:
                camera = apply_added_phase(camera, pattern, int(added.get("photon", 1)))
            notes["ft_method"] = "analytic"
        else:
            for j in ft_photons:
                camera = fourier_path(camera, j, optics)
            camera = normalize(camera)
            notes["ft_method"] = "numeric"
    return StateBundle(camera, truth, np.broadcast_to(phase, spec.shape), notes)


def phase_agreement(rec, truth, true_phase=None, threshold: float = 0.1) -> dict:
    """Mean-aligned comparison of a reconstructed complex array with the truth.

    Bins with |truth|^2 above ``threshold`` of its maximum (and nonzero
    reconstruction) are compared. The constant offset is the argument of the
    intensity-weighted phasor sum; residuals are wrapped to (-pi, pi].
    """
    rec = np.asarray(rec)
    truth = np.asarray(truth)
    w = np.abs(truth) ** 2
    sel = (w > threshold * w.max()) & (np.abs(rec) > 0)
    if sel.sum() < 2:
        return {"bins": int(sel.sum()), "rms": float("nan"), "corr": float("nan"), "offset": float("nan")}
    tp = np.angle(truth) if true_phase is None else np.broadcast_to(true_phase, truth.shape)
    diff = np.angle(rec[sel]) - tp[sel]
    c = float(np.angle(np.sum(w[sel] * np.exp(1j * diff))))
    res = np.angle(np.exp(1j * (diff - c)))
    t = tp[sel]
    corr = float(np.corrcoef(t + res, t)[0, 1]) if np.std(t) > 0 else float("nan")
    return {"bins": int(sel.sum()), "rms": float(np.sqrt(np.mean(res**2))), "corr": corr, "offset": c}


class _Artifacts:
    """Tracks written files so a failed run can remove them."""

    def __init__(self, outdir: Path):
        self.outdir = outdir
        self.files: list[Path] = []
        self.created_dir = False

    def path(self, name: str) -> Path:
        return self.outdir / name

    def add(self, p: Path):
        self.files.append(Path(p))
        side = cwsio.sidecar_path(p)
        if side.exists():
            self.files.append(side)

    def cleanup(self):
        for p in self.files:
            try:
                p.unlink()
            except FileNotFoundError:
                pass
        if self.created_dir:
            try:
                self.outdir.rmdir()
            except OSError:
                pass


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (StageError, ConfigError):
        raise
    except (CWSError, ValueError, ArithmeticError, MemoryError) as exc:
        raise StageError(name, exc) from exc


def _recon_params(cfg: dict) -> ReconParams:
    r = cfg["recon"]
    return ReconParams(int(r["repeats"]), float(r["fill_gamma"]), float(r["fill_pmin"]),
                       int(os.environ.get("CWS_WORKERS", r["workers"])), int(r["seed"]),
                       r.get("edge_rule", "auto"))


def simulate_measurements(bundle: StateBundle, optics: OpticalConfig, cfg: dict):
    """k_x (and k_y when photons are 2D) data: histograms, or exact pmfs when noiseless."""
    samp = cfg["sampling"]
    spec = bundle.camera.spec
    axes = [MeasurementAxis.KX] + ([MeasurementAxis.KY] if spec.dims_per_photon == 2 else [])
    out = {}
    for i, axis in enumerate(axes):
        pmf = joint_intensities(bundle.camera, optics.with_axis(axis))
        if samp.get("noiseless"):
            out[axis] = pmf
        else:
            out[axis] = sample_coincidences(pmf, int(samp["total"]), int(samp["seed"]) + i)
    return out


def run_pipeline(cfg: dict) -> dict:
    """Run every stage and write the artifacts listed in the returned manifest."""
    outdir = Path(cfg["output"]["dir"])
    arts = _Artifacts(outdir)
    if not outdir.exists():
        outdir.mkdir(parents=True)
        arts.created_dir = True
    try:
        return _run(cfg, arts)
    except BaseException:
        arts.cleanup()
        raise


def _run(cfg: dict, arts: _Artifacts) -> dict:
    spec = _stage("config", build_spec, cfg)
    ft_paths, rec = _stage("config", decide_ft, cfg, spec)
    optics = _stage("config", build_optics, cfg, ft_paths)
    bundle = _stage("states", build_state, cfg, spec, optics)
    data = _stage("forward", simulate_measurements, bundle, optics, cfg)
    summary: list[tuple[str, str, object]] = [
        ("config", "ft_paths", ",".join(str(int(f)) for f in ft_paths)),
        ("config", "ft_method", bundle.notes.get("ft_method", "none")),
    ]
    if rec is not None:
        summary += [("config", "fwhm_position_m", rec.fwhm_position), ("config", "fwhm_fourier_m", rec.fwhm_fourier)]

    if cfg["output"].get("keep_state", True):
        arts.add(cwsio.write_field(arts.path("state_camera.cwsf"), bundle.camera, {"notes": bundle.notes}))
    for axis, d in data.items():
        if hasattr(d, "counts"):
            arts.add(cwsio.write_histogram(arts.path(f"hist_{axis.value.lower()}.cwsh"), d,
                                           {"optics": optics.with_axis(axis).to_dict()}))
    kx = data[MeasurementAxis.KX]
    ky = data.get(MeasurementAxis.KY)
    est_params = EstimatorParams(float(cfg["estimator"]["roi_epsilon"]), cfg["estimator"]["clamp_policy"])
    est = _stage("estimate", estimate_gradients, kx, ky, optics.displacement, est_params)
    arts.add(cwsio.write_gradient(arts.path("gradient.cwsg"), est.gradient))
    summary += [("estimate", "roi_bins", int(est.gradient.mask.sum())),
                ("estimate", "roi_fraction", float(est.gradient.mask.mean()))]
    summary += [("estimate", f"clamped_{k}", v) for k, v in est.gradient.clamp_stats().items()]

    params = _recon_params(cfg)
    pm = _stage("reconstruct", integrate_phase, est.gradient, est.intensity, params)
    arts.add(cwsio.write_phase(arts.path("phase.cwsp"), pm, {"params": params.to_dict()}))
    result = _stage("reconstruct", assemble_wavefunction, pm, est.amplitude)
    arts.add(cwsio.write_field(arts.path("psi_rec_camera.cwsf"), result.wavefunction))
    final = _stage("inverse_ft", inverse_fourier, result, optics) if any(ft_paths) else result.wavefunction
    if any(ft_paths):
        arts.add(cwsio.write_field(arts.path("psi_rec.cwsf"), final))
    summary += [("reconstruct", "reference_bin", ",".join(map(str, pm.reference_bin))),
                ("reconstruct", "repeats", pm.repeats),
                ("reconstruct", "dispersion_max_rad", float(np.nanmax(pm.dispersion[pm.mask])))]
    camera_cmp = phase_agreement(np.where(pm.mask, result.wavefunction.values, 0), bundle.camera.values,
                                 None if any(ft_paths) else bundle.truth_phase)
    summary += [("compare", f"camera_{k}", v) for k, v in camera_cmp.items()]

    panels = []
    hue = float(cfg["output"].get("hue_offset", 0.0))
    for pat in cfg["output"].get("slices", []):
        try:
            sl = pattern_slice(final, pat)
            tr = pattern_slice(bundle.truth, pat)
        except ArgumentError as exc:
            raise StageError("render", exc) from exc
        tag = pat.replace(",", "").replace(".", "p").replace("-", "m")
        p = write_ppm(arts.path(f"slice_{tag}.ppm"), render_complex(sl, hue))
        arts.add(p)
        cmp = phase_agreement(sl.values, tr.values, _slice_real(bundle.truth_phase, spec, pat))
        summary += [("slice " + pat, k, v) for k, v in cmp.items()]
        shown = sl.values * np.exp(-1j * cmp["offset"]) if math.isfinite(cmp["offset"]) else sl.values
        panels += [(f"rec ({pat}), offset removed", shown), (f"truth ({pat})", tr.values)]
    if cfg["output"].get("figure", True) and panels:
        extent_mm = spec.axis_len * spec.pitch * 1e3
        arts.add(save_slice_figure(arts.path("slices.png"), panels, extent_mm, hue))

    arts.add(write_summary(arts.path("summary.tsv"), summary))
    manifest = {
        "config": cfg,
        "seeds": {"sampling": cfg["sampling"]["seed"], "recon": params.seed},
        "workers": params.workers,
        "artifacts": [{"file": p.name, "sha256": cwsio.file_sha256(p)} for p in arts.files],
        "summary": [{"stage": s, "key": k, "value": v} for s, k, v in summary],
    }
    mpath = arts.path("manifest.json")
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    arts.files.append(mpath)
    return manifest


def _slice_real(arr: np.ndarray, spec: LatticeSpec, pat: str) -> np.ndarray:
    """Real-valued companion of :func:`pattern_slice`."""
    return pattern_slice(ComplexField(spec, np.asarray(arr, float) + 0j), pat).values.real


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def format_tsv(rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def write_summary(path, rows) -> Path:
    path = Path(path)
    path.write_text(format_tsv([("stage", "key", "value")] + list(rows)))
    return path


def run_from_args(config_path=None, preset=None, overrides=None) -> dict:
    return run_pipeline(load_config(config_path, preset, overrides))
