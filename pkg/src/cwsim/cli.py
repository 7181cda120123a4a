"""Command-line entry point: ``cwsim <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 stage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as cwsio
from .config import PRESETS, load_config
from .core import ComplexField, pattern_slice
from .errors import CWSError, ConfigError, StageError
from .estimator import EstimatorParams, estimate_gradients
from .pipeline import (_recon_params, _stage, build_optics, build_spec, build_state, decide_ft, format_tsv,
                       run_pipeline, simulate_measurements)
from .reconstructor import assemble_wavefunction, integrate_phase
from .render import render_complex, write_ppm
from .validation import run_validation, write_report

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", help="JSON config document")
    p.add_argument("--preset", choices=sorted(PRESETS), help="start from a built-in config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a dotted config key (repeatable), e.g. recon.repeats=10")
    p.add_argument("-o", "--out", help="output directory (overrides output.dir)")


def _load(args) -> dict:
    overrides = list(args.overrides)
    if getattr(args, "out", None):
        overrides.append(f"output.dir={json.dumps(args.out)}")
    return load_config(args.config, args.preset, overrides)


def _print_rows(rows) -> None:
    sys.stdout.write(format_tsv(rows))


def cmd_pipeline(args) -> int:
    manifest = run_pipeline(_load(args))
    _print_rows([("stage", "key", "value")] + [(r["stage"], r["key"], r["value"]) for r in manifest["summary"]])
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    outdir = Path(cfg["output"]["dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    spec = _stage("config", build_spec, cfg)
    ft_paths, _ = _stage("config", decide_ft, cfg, spec)
    optics = _stage("config", build_optics, cfg, ft_paths)
    bundle = _stage("states", build_state, cfg, spec, optics)
    if cfg["sampling"].get("noiseless"):
        raise ConfigError("simulate writes sampled histograms; set sampling.noiseless=false")
    data = _stage("forward", simulate_measurements, bundle, optics, cfg)
    rows = [("artifact", "sha256")]
    paths = [cwsio.write_field(outdir / "state_camera.cwsf", bundle.camera, {"notes": bundle.notes})]
    for axis, hist in data.items():
        paths.append(cwsio.write_histogram(outdir / f"hist_{axis.value.lower()}.cwsh", hist,
                                           {"optics": optics.with_axis(axis).to_dict()}))
    rows += [(p.name, cwsio.file_sha256(p)) for p in paths]
    _print_rows(rows)
    return EXIT_OK


def cmd_estimate(args) -> int:
    kx = cwsio.read_histogram(args.kx)
    ky = cwsio.read_histogram(args.ky) if args.ky else None
    params = EstimatorParams(args.roi_epsilon, args.clamp_policy)
    est = _stage("estimate", estimate_gradients, kx, ky, args.displacement, params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    g = cwsio.write_gradient(out / "gradient.cwsg", est.gradient)
    a = cwsio.write_field(out / "amplitude.cwsf", ComplexField(kx.spec, est.amplitude), {"kind": "amplitude"})
    rows = [("key", "value"), ("roi_bins", int(est.gradient.mask.sum()))]
    rows += [(f"clamped_{k}", v) for k, v in est.gradient.clamp_stats().items()]
    rows += [(p.name, cwsio.file_sha256(p)) for p in (g, a)]
    _print_rows(rows)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    grad = cwsio.read_gradient(args.gradient)
    amp = np.abs(cwsio.read_field(args.amplitude).values)
    cfg = load_config(None, None, [f"recon.{k}={v}" for k, v in (("repeats", args.repeats), ("seed", args.seed),
                                                                 ("workers", args.workers)) if v is not None])
    params = _recon_params(cfg)
    pm = _stage("reconstruct", integrate_phase, grad, amp**2, params)
    res = assemble_wavefunction(pm, amp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    p1 = cwsio.write_phase(out / "phase.cwsp", pm, {"params": params.to_dict()})
    p2 = cwsio.write_field(out / "psi_rec_camera.cwsf", res.wavefunction)
    rows = [("key", "value"), ("reference_bin", ",".join(map(str, pm.reference_bin))), ("repeats", pm.repeats)]
    rows += [(p.name, cwsio.file_sha256(p)) for p in (p1, p2)]
    _print_rows(rows)
    return EXIT_OK


def cmd_render(args) -> int:
    field = cwsio.read_field(args.field)
    sl = _stage("render", pattern_slice, field, args.slice)
    path = write_ppm(args.out, render_complex(sl, args.hue_offset))
    _print_rows([("artifact", "sha256"), (path.name, cwsio.file_sha256(path))])
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load(args)
    rows = run_validation(cfg)
    report = write_report(rows, cfg["output"]["dir"])
    sys.stdout.write(report["text"])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cwsim", description="Coincidence wavefront sensing simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pipeline", help="run every stage and write all artifacts")
    _config_args(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("simulate", help="build the state and write sampled k_x / k_y histograms")
    _config_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="gradient field and amplitude from histograms")
    p.add_argument("--kx", required=True)
    p.add_argument("--ky")
    p.add_argument("--displacement", type=float, required=True, help="Savart displacement l in metres")
    p.add_argument("--roi-epsilon", type=float, default=0.005)
    p.add_argument("--clamp-policy", choices=("clip", "mask"), default="clip")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("reconstruct", help="integrate a gradient field into a phase map")
    p.add_argument("--gradient", required=True)
    p.add_argument("--amplitude", required=True)
    p.add_argument("--repeats", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("render", help="render a 2D slice of a field file as PPM")
    p.add_argument("--field", required=True)
    p.add_argument("--slice", required=True, help='slice pattern, e.g. "x,y,x,y" or "x,0,y,0"')
    p.add_argument("--hue-offset", type=float, default=0.0)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("validate", help="run oracle cross-checks and write a report")
    _config_args(p)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"stage error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except CWSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
