"""Pipeline configuration: one JSON document, dotted-path overrides, presets."""

from __future__ import annotations

import copy
import json
import math
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError

DEFAULTS: dict = {
    "state": {
        "preset": "gaussian_schell",
        "a": 1e6,
        "b": 1e9,
        "invert_photons": [],
        "added_phase": None,
        "ft_method": "analytic",
    },
    "lattice": {"n": 2, "dims_per_photon": 2, "axis_len": 32, "pitch": 25e-6},
    "optics": {"wavelength": 800e-9, "focal_length": 0.2, "displacement": 25e-6, "ft": "AUTO",
               "ft_photon": 0},
    "sampling": {"total": 10**7, "seed": 0, "noiseless": False},
    "estimator": {"roi_epsilon": 0.005, "clamp_policy": "clip"},
    "recon": {"repeats": 25, "fill_gamma": 0.5, "fill_pmin": 0.05, "workers": 1, "seed": 0,
              "edge_rule": "auto"},
    "output": {"dir": "cws_run", "slices": ["x,y,x,y", "x,0,y,0", "0,x,0,y", "x,y,0,0", "0,0,x,y"],
               "hue_offset": 0.0, "figure": True, "keep_state": True},
    "validate": {"synthetic_mask": None},
}

PRESETS: dict[str, dict] = {
    "case1": {
        "state": {"preset": "gaussian_schell", "a": 1e6, "b": 1e9,
                  "added_phase": {"photon": 1, "pattern": {"kind": "sum", "terms": [
                      {"kind": "tilt", "qu": 2e3, "qv": 0.0},
                      {"kind": "bump", "amplitude": 1.0, "width": 0.15e-3}]}}},
        "optics": {"displacement": 50e-6, "ft": "FOURIER"},
    },
    "case1-noft": {
        "state": {"preset": "gaussian_schell", "a": 1e6, "b": 1e9,
                  "added_phase": {"photon": 1, "pattern": {"kind": "sum", "terms": [
                      {"kind": "tilt", "qu": 2e3, "qv": 0.0},
                      {"kind": "bump", "amplitude": 1.0, "width": 0.15e-3}]}}},
        "optics": {"displacement": 50e-6, "ft": "FOUR_F"},
        "recon": {"repeats": 50},
    },
    "case2": {
        "state": {"preset": "phase_patterned", "a": 2e6,
                  "phi_x": {"kind": "bilinear", "alpha": 3e6},
                  "phi_y": {"kind": "bump", "amplitude": 3.0, "width": 0.3e-3}},
        "lattice": {"axis_len": 24, "pitch": 2e-3 / 24},
        "optics": {"displacement": 2e-3 / 24, "ft": "FOUR_F"},
        "output": {"slices": ["x,0,y,0", "0,x,0,y"]},
    },
    "tilts": {
        "state": {"preset": "gaussian_tilts", "widths": [0.0, 4e6], "wavenumbers": [[1e4, 0.0], [0.0, 0.0]]},
        "optics": {"ft": "FOUR_F"},
        "sampling": {"noiseless": True},
        "lattice": {"axis_len": 16},
    },
}

STATE_PRESETS = ("gaussian_schell", "phase_patterned", "gaussian_tilts", "zero")
FT_CHOICES = ("AUTO", "FOURIER", "FOUR_F")


def deep_merge(base: Mapping, update: Mapping) -> dict:
    out = copy.deepcopy(dict(base))
    for k, v in update.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_value(text: str) -> Any:
    """JSON literal when it parses, otherwise the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_dotted(cfg: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    if not all(keys):
        raise ConfigError(f"bad override key {dotted!r}")
    node = cfg
    for k in keys[:-1]:
        nxt = node.get(k)
        if nxt is None:
            nxt = node[k] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {dotted!r} descends into non-object key {k!r}")
        node = nxt
    node[keys[-1]] = value


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    cfg = copy.deepcopy(cfg)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        set_dotted(cfg, key.strip(), parse_value(text.strip()))
    return cfg


def load_config(path: str | Path | None = None, preset: str | None = None,
                overrides: list[str] | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = deep_merge(cfg, PRESETS[preset])
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        cfg = deep_merge(cfg, doc)
    cfg = apply_overrides(cfg, overrides or [])
    check_config(cfg)
    return cfg


def _pattern_files(spec: Any):
    if isinstance(spec, Mapping):
        if spec.get("kind") == "pgm":
            yield spec.get("path")
        for v in spec.values():
            yield from _pattern_files(v)
    elif isinstance(spec, list):
        for v in spec:
            yield from _pattern_files(v)


def check_config(cfg: Mapping) -> None:
    try:
        state, lat, opt = cfg["state"], cfg["lattice"], cfg["optics"]
        samp, out = cfg["sampling"], cfg["output"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"config is missing section {exc}") from exc
    if state.get("preset") not in STATE_PRESETS:
        raise ConfigError(f"state.preset must be one of {STATE_PRESETS}, got {state.get('preset')!r}")
    if str(opt.get("ft", "AUTO")).upper() not in FT_CHOICES:
        raise ConfigError(f"optics.ft must be one of {FT_CHOICES}")
    total = samp.get("total")
    if not isinstance(total, (int, float)) or not math.isfinite(total) or total < 1 or int(total) != total:
        raise ConfigError(f"sampling.total must be a whole number >= 1, got {total!r}")
    for key in ("n", "dims_per_photon", "axis_len"):
        if not isinstance(lat.get(key), int):
            raise ConfigError(f"lattice.{key} must be an integer")
    for key in ("pitch",):
        if not isinstance(lat.get(key), (int, float)) or not lat[key] > 0:
            raise ConfigError(f"lattice.{key} must be positive")
    for key in ("wavelength", "focal_length", "displacement"):
        if not isinstance(opt.get(key), (int, float)) or not opt[key] > 0:
            raise ConfigError(f"optics.{key} must be positive")
    for path in _pattern_files(state):
        if not path or not Path(path).exists():
            raise ConfigError(f"pattern file {path!r} does not exist")
    if not isinstance(out.get("slices", []), list):
        raise ConfigError("output.slices must be a list")
