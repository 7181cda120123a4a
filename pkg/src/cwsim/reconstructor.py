"""Line-integral phase reconstruction by randomized concurrent flood fill.

One repeat works like this. The brightest bin gets phase 0 and is queued.
Workers take bins off a shared FIFO. For each unfilled in-mask neighbour a
worker draws against that neighbour's fill probability. On success it claims
the neighbour (first claimant wins) and extends the phase along the edge:

    phi(p + e_a) = phi(p) + g_a(p) * pitch
    phi(p - e_a) = phi(p) - g_a(p - e_a) * pitch

A bin that still has unfilled neighbours goes back on the queue. The repeat
ends once the queue drains. Repeats are averaged.

The workers of one repeat are scheduled as deterministic interleaved
turns: every turn each worker takes one bin, and claims inside the turn
resolve in dequeue order. That keeps the fill-path distribution the same
for every worker count, so only the random streams differ. Each worker draws from its own random stream, seeded from
``(seed, repeat, worker)``. Repeats are independent and run on a thread
pool, since the kernel releases the GIL.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numba
import numpy as np
from scipy import ndimage

from .core import ComplexField, LatticeSpec, PhysicalConstants
from .errors import ArgumentError, ConvergenceError, DisconnectedRoiError, EmptyRoiError
from .estimator import GradientField
from .forward import OpticalConfig, inverse_fourier_path

ITERATION_CAP_PER_BIN = 10**6


@dataclass(frozen=True)
class ReconParams:
    """Flood-fill settings.

    ``edge_rule`` chooses the slope used on the edge between p and p + e_a:
    ``"forward"`` takes the sample at p; ``"midpoint"`` averages the samples
    at p and p + e_a. ``"auto"`` picks midpoint for gradients sampled at
    lattice points (estimator output, ``offset_meta["sampling"] == "node"``)
    and forward otherwise.
    """

    repeats: int = 25
    fill_gamma: float = 0.5
    fill_pmin: float = 0.05
    workers: int = 1
    seed: int = 0
    edge_rule: str = "auto"

    def __post_init__(self):
        if int(self.repeats) < 1:
            raise ArgumentError("repeats must be >= 1")
        if not 0 < self.fill_pmin <= 1:
            raise ArgumentError("fill_pmin must lie in (0, 1]")
        if not self.fill_gamma >= 0:
            raise ArgumentError("fill_gamma must be >= 0")
        if int(self.workers) < 1:
            raise ArgumentError("workers must be >= 1")
        if self.edge_rule not in ("auto", "forward", "midpoint"):
            raise ArgumentError(f"unknown edge rule {self.edge_rule!r}")

    def to_dict(self) -> dict:
        return {"repeats": self.repeats, "fill_gamma": self.fill_gamma, "fill_pmin": self.fill_pmin,
                "workers": self.workers, "seed": self.seed, "edge_rule": self.edge_rule}


@dataclass(frozen=True)
class PhaseMap:
    spec: LatticeSpec
    values: np.ndarray = dc_field(repr=False)  # NaN outside the mask
    mask: np.ndarray = dc_field(repr=False)
    reference_bin: tuple[int, ...] = ()
    fill_counts: np.ndarray = dc_field(default=None, repr=False)
    dispersion: np.ndarray = dc_field(default=None, repr=False)  # std over repeats
    repeats: int = 1
    repeat_values: np.ndarray | None = dc_field(default=None, repr=False)


@dataclass(frozen=True)
class ReconResult:
    wavefunction: ComplexField
    phase: PhaseMap
    amplitude_source: str = "sqrt(I_1L + I_1R), k_x measurement"
    params: dict = dc_field(default_factory=dict)


@numba.njit(cache=True, inline="always")
def _uniform(states, w):
    z = states[w] + np.uint64(0x9E3779B97F4A7C15)
    states[w] = z
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return float(z >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True, nogil=True)
def _fill_repeat(mask, slopes, fill_prob, ref, axis_len, pitch, states, max_steps):
    nb = mask.size
    naxes = slopes.shape[0]
    strides = np.empty(naxes, np.int64)
    st = 1
    for ax in range(naxes - 1, -1, -1):
        strides[ax] = st
        st *= axis_len
    phase = np.zeros(nb)
    filled = np.zeros(nb, np.bool_)
    queue = np.empty(nb, np.int64)
    head = 0
    size = 1
    queue[0] = ref
    filled[ref] = True
    nworkers = states.size
    batch = np.empty(nworkers, np.int64)
    steps = 0
    while size > 0:
        m = min(nworkers, size)
        for w in range(m):
            batch[w] = queue[head]
            head += 1
            if head == nb:
                head = 0
            size -= 1
        for w in range(m):
            p = batch[w]
            pending = False
            for ax in range(naxes):
                c = (p // strides[ax]) % axis_len
                if c + 1 < axis_len:
                    q = p + strides[ax]
                    if mask[q] and not filled[q]:
                        if _uniform(states, w) < fill_prob[q]:
                            filled[q] = True
                            phase[q] = phase[p] + slopes[ax, p] * pitch
                            tail = head + size
                            if tail >= nb:
                                tail -= nb
                            queue[tail] = q
                            size += 1
                        else:
                            pending = True
                if c >= 1:
                    q = p - strides[ax]
                    if mask[q] and not filled[q]:
                        if _uniform(states, w) < fill_prob[q]:
                            filled[q] = True
                            phase[q] = phase[p] - slopes[ax, q] * pitch
                            tail = head + size
                            if tail >= nb:
                                tail -= nb
                            queue[tail] = q
                            size += 1
                        else:
                            pending = True
            if pending:
                tail = head + size
                if tail >= nb:
                    tail -= nb
                queue[tail] = p
                size += 1
        steps += m
        if steps > max_steps:
            return phase, filled, -1
    return phase, filled, steps


def resolve_edge_rule(grad: GradientField, rule: str = "auto") -> str:
    if rule != "auto":
        return rule
    return "midpoint" if grad.offset_meta.get("sampling") == "node" else "forward"


def edge_slopes(grad: GradientField, rule: str = "auto") -> np.ndarray:
    """Slopes per lattice axis for the edge from each bin to its + neighbour."""
    spec = grad.spec
    rule = resolve_edge_rule(grad, rule)
    out = np.zeros((spec.naxes,) + spec.shape)
    for (j, d), k in grad.components.items():
        ax = spec.axis(j, d)
        k = np.nan_to_num(np.asarray(k, float), nan=0.0)
        if rule == "midpoint":
            nxt = np.zeros_like(k)
            sl_dst = [slice(None)] * spec.naxes
            sl_src = [slice(None)] * spec.naxes
            sl_dst[ax] = slice(0, -1)
            sl_src[ax] = slice(1, None)
            nxt[tuple(sl_dst)] = k[tuple(sl_src)]
            k = 0.5 * (k + nxt)
        out[ax] = k
    return out


def fill_probability(intensity: np.ndarray, mask: np.ndarray, params: ReconParams,
                     clamped: np.ndarray | None = None) -> np.ndarray:
    """max(pmin, (I / I_max)^gamma); flagged bins get pmin."""
    inten = np.where(mask, np.clip(np.asarray(intensity, float), 0, None), 0.0)
    peak = inten.max()
    rel = inten / peak if peak > 0 else np.zeros_like(inten)
    p = np.maximum(params.fill_pmin, rel**params.fill_gamma)
    if clamped is not None:
        p = np.where(clamped, params.fill_pmin, p)
    return np.minimum(p, 1.0)


def _stream_states(seed: int, repeat: int, nworkers: int) -> np.ndarray:
    return np.array([np.random.SeedSequence([int(seed), int(repeat), w]).generate_state(1, np.uint64)[0]
                     for w in range(nworkers)], dtype=np.uint64)


def _workers(params: ReconParams) -> int:
    env = os.environ.get("CWS_WORKERS")
    return int(env) if env else int(params.workers)


def integrate_phase(grad: GradientField, intensity: np.ndarray, params: ReconParams = ReconParams(),
                    keep_repeats: bool = False) -> PhaseMap:
    spec = grad.spec
    mask = np.asarray(grad.mask, bool)
    if not mask.any():
        raise EmptyRoiError("gradient mask is empty")
    labels, ncomp = ndimage.label(mask, structure=ndimage.generate_binary_structure(spec.naxes, 1))
    if ncomp != 1:
        raise DisconnectedRoiError(f"mask has {ncomp} face-connected components")
    ref = np.unravel_index(np.argmax(np.where(mask, intensity, -np.inf)), spec.shape)
    ref_flat = int(np.ravel_multi_index(ref, spec.shape))
    slopes = edge_slopes(grad, params.edge_rule).reshape(spec.naxes, -1)
    clamped = grad.clamped_any() if grad.clamped else None
    prob = fill_probability(intensity, mask, params, clamped).ravel()
    flat_mask = mask.ravel()
    nworkers = _workers(params)
    max_steps = ITERATION_CAP_PER_BIN * int(flat_mask.sum())

    def one(r):
        states = _stream_states(params.seed, r, nworkers)
        phase, filled, steps = _fill_repeat(flat_mask, slopes, prob, ref_flat, spec.axis_len,
                                            spec.pitch, states, max_steps)
        if steps < 0:
            raise ConvergenceError(f"repeat {r} exceeded the iteration cap")
        return phase, filled

    acc = np.zeros(spec.nbins)
    acc2 = np.zeros(spec.nbins)
    counts = np.zeros(spec.nbins, np.int64)
    kept = [] if keep_repeats else None
    pool_size = max(1, min(nworkers, params.repeats))
    with ThreadPoolExecutor(max_workers=pool_size) as pool:
        futures = [pool.submit(one, r) for r in range(params.repeats)]
        for fut in futures:
            phase, filled = fut.result()
            acc += phase
            acc2 += phase * phase
            counts += filled
            if kept is not None:
                kept.append(np.where(filled, phase, np.nan).reshape(spec.shape))
    mean = acc / params.repeats
    var = np.clip(acc2 / params.repeats - mean**2, 0, None)
    values = np.where(flat_mask, mean, np.nan).reshape(spec.shape)
    values[ref] = 0.0
    return PhaseMap(spec, values, mask, tuple(int(i) for i in ref), counts.reshape(spec.shape),
                    np.where(flat_mask, np.sqrt(var), np.nan).reshape(spec.shape), params.repeats,
                    np.stack(kept) if kept is not None else None)


def assemble_wavefunction(phase: PhaseMap, amplitude: np.ndarray) -> ReconResult:
    """amplitude * exp(i phi) on the mask, zero elsewhere."""
    amplitude = np.asarray(amplitude, float)
    if amplitude.shape != phase.spec.shape:
        raise ArgumentError(f"amplitude shape {amplitude.shape} does not match {phase.spec.shape}")
    if np.any(amplitude < 0):
        raise ArgumentError("amplitude must be non-negative")
    phi = np.where(phase.mask, np.nan_to_num(phase.values), 0.0)
    values = np.where(phase.mask, amplitude * np.exp(1j * phi), 0.0)
    return ReconResult(ComplexField(phase.spec, values), phase)


def inverse_fourier(result: ReconResult, cfg: OpticalConfig) -> ComplexField:
    """Undo the Fourier lens on every path flagged in ``cfg.ft_paths``."""
    field = result.wavefunction
    for j, ft in enumerate(cfg.ft_paths):
        if ft:
            field = inverse_fourier_path(field, j, cfg)
    return field


def bohmian_velocity(grad: GradientField, wavelength: float,
                     consts: PhysicalConstants = PhysicalConstants()) -> dict:
    """v = hbar k / m with photon mass m = h / (c lambda); NaN off the mask."""
    if not wavelength > 0:
        raise ArgumentError("wavelength must be positive")
    m = consts.photon_mass(wavelength)
    return {key: np.where(grad.mask, consts.hbar * np.asarray(k, float) / m, np.nan)
            for key, k in grad.components.items()}
