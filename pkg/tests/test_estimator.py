import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cwsim.core import ComplexField, LatticeSpec
from cwsim.errors import ArgumentError, EmptyRoiError
from cwsim.estimator import (EstimatorParams, FTDecision, align, amplitude_estimate, conditional_fwhm,
                             conditional_split, estimate_gradients, gradient_component, marginal_counts,
                             marginal_gradient, recommend_ft, roi_mask, valid_support)
from cwsim.forward import (CoincidenceHistogram, IntensitySet, OpticalConfig, joint_intensities,
                           sample_coincidences)
from cwsim.oracle import weak_value_wavenumber
from cwsim.states import (GaussianSchellParams, PhasePattern, apply_added_phase, gaussian_bump_pattern,
                          lattice_pattern_grid, make_gaussian_schell, make_gaussian_schell_ft)

PITCH = 25e-6


def _hist(spec, counts, axis="KX"):
    counts = np.asarray(counts)
    return CoincidenceHistogram(spec, counts, int(counts.sum()), 0, axis)


def _bump_state(axis_len, pitch):
    spec = LatticeSpec(2, 2, axis_len, pitch)
    f = make_gaussian_schell(GaussianSchellParams(1e6, 0.0), spec)
    return apply_added_phase(f, gaussian_bump_pattern(2.0, 0.2e-3, **lattice_pattern_grid(spec)), 1)


def test_params_validation():
    with pytest.raises(ArgumentError):
        EstimatorParams(roi_epsilon=1.0)
    with pytest.raises(ArgumentError):
        EstimatorParams(clamp_policy="drop")


def test_conditional_split_n2():
    spec = LatticeSpec(2, 1, 3, 1.0)
    rng = np.random.default_rng(0)
    counts = rng.integers(0, 50, (4,) + spec.shape)
    I_L, I_R = conditional_split(_hist(spec, counts), 0)
    assert np.array_equal(I_L, counts[0] + counts[1])
    assert np.array_equal(I_R, counts[2] + counts[3])
    rr = np.zeros_like(counts)
    rr[3] = 7
    assert np.all(conditional_split(_hist(spec, rr), 0)[0] == 0)


def test_conditional_split_n3_matches_bitmask_enumeration():
    spec = LatticeSpec(3, 1, 3, 1.0)
    counts = np.random.default_rng(1).integers(0, 9, (8,) + spec.shape)
    for photon in range(3):
        I_L, I_R = conditional_split(_hist(spec, counts), photon)
        bit = 2 - photon
        want_L = sum(counts[c] for c in range(8) if not (c >> bit) & 1)
        want_R = sum(counts[c] for c in range(8) if (c >> bit) & 1)
        assert np.array_equal(I_L, want_L) and np.array_equal(I_R, want_R)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(0, 10**6))
def test_conditional_split_conserves_counts(n, seed):
    spec = LatticeSpec(n, 1, 4, 1.0)
    rng = np.random.default_rng(seed)
    pmf = IntensitySet(spec, rng.random((2**n,) + spec.shape))
    h = sample_coincidences(pmf, 5000, seed)
    for j in range(n):
        I_L, I_R = conditional_split(h, j)
        assert int(I_L.sum() + I_R.sum()) == h.total


def test_gradient_component_examples():
    l = 25e-6
    assert np.all(gradient_component(np.ones(4), np.ones(4), l).values == 0)
    r = math.sin(0.5)
    k = gradient_component(np.array([1 - r]), np.array([1 + r]), l).values[0]
    assert k == pytest.approx(1e4, rel=1e-12)
    comp = gradient_component(np.array([-0.015, 1.0]), np.array([1.015, 1.0]), l)
    assert comp.values[0] == pytest.approx(math.pi / (4 * l))
    assert comp.clamped.tolist() == [True, False]
    masked = gradient_component(np.array([-0.015, 1.0]), np.array([1.015, 1.0]), l,
                                EstimatorParams(clamp_policy="mask"))
    assert math.isnan(masked.values[0]) and not masked.mask[0]


def test_gradient_component_ky_sign_and_empty_bins():
    l = 25e-6
    comp = gradient_component(np.array([2.0, 0.0]), np.array([1.0, 0.0]), l, axis="KY")
    assert comp.values[0] > 0 and comp.dim == 1
    assert not comp.mask[1] and math.isnan(comp.values[1])
    with pytest.raises(ArgumentError):
        gradient_component(np.ones(2), np.ones(2), 0.0)


def test_evaluation_offsets():
    spec = LatticeSpec(2, 2, 6, PITCH)
    ones = np.ones(spec.shape)
    assert gradient_component(ones, ones, PITCH, spec=spec).offset == (0, -1, 0, -1)
    assert gradient_component(ones, ones, PITCH, axis="KY", spec=spec).offset == (1, 0, 1, 0)
    moved = align(np.arange(4.0), (1,))
    assert np.isnan(moved[0]) and moved[1:].tolist() == [0, 1, 2]


def test_amplitude_examples():
    assert amplitude_estimate(0.0, 0.0) == 0.0
    assert amplitude_estimate(3.0, 1.0) == 2.0


def test_amplitude_tracks_total_intensity():
    spec = LatticeSpec(2, 2, 12, PITCH)
    f = make_gaussian_schell_ft(GaussianSchellParams(1e6, 1e9), spec, 800e-9, 0.2)
    pmf = joint_intensities(f, OpticalConfig(displacement=PITCH, ft_paths=(True, False)))
    a2 = amplitude_estimate(*conditional_split(pmf, 0)) ** 2
    assert np.max(np.abs(a2 - pmf.pmf.sum(axis=0))) < 1e-12 * a2.max()


def test_roi_full_lattice_minus_rim():
    spec = LatticeSpec(2, 1, 6, 1.0)
    mask = roi_mask(_hist(spec, np.ones((4,) + spec.shape, int)), params=EstimatorParams(roi_epsilon=0.0))
    expect = np.zeros(spec.shape, bool)
    expect[1:-1, 1:-1] = True
    assert np.array_equal(mask, expect)


def test_roi_keeps_brightest_blob():
    spec = LatticeSpec(1, 2, 12, 1.0)
    counts = np.zeros((2,) + spec.shape, int)
    counts[:, 2:5, 2:5] = 10
    counts[:, 7:10, 7:10] = 20
    mask = roi_mask(_hist(spec, counts))
    assert mask[8, 8] and not mask[3, 3] and mask.sum() == 9


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 0.5), st.floats(0.0, 0.5), st.integers(0, 1000))
def test_roi_monotone_in_epsilon(e1, e2, seed):
    lo, hi = sorted((e1, e2))
    spec = LatticeSpec(1, 2, 10, 1.0)
    rng = np.random.default_rng(seed)
    h = _hist(spec, rng.integers(1, 100, (2,) + spec.shape))
    try:
        m_lo = roi_mask(h, params=EstimatorParams(roi_epsilon=lo))
        m_hi = roi_mask(h, params=EstimatorParams(roi_epsilon=hi))
    except EmptyRoiError:
        return
    assert not np.any(m_hi & ~m_lo)


def test_roi_sanity_envelope_case1():
    spec = LatticeSpec(2, 2, 32, PITCH)
    f = make_gaussian_schell_ft(GaussianSchellParams(1e6, 1e9), spec, 800e-9, 0.2)
    cfg = OpticalConfig(displacement=PITCH, ft_paths=(True, False))
    kx = sample_coincidences(joint_intensities(f, cfg), 10**6, 0)
    ky = sample_coincidences(joint_intensities(f, cfg.with_axis("KY")), 10**6, 1)
    frac = roi_mask(kx, ky, EstimatorParams(roi_epsilon=0.01), PITCH).mean()
    assert 0.01 <= frac <= 0.60


def test_roi_empty():
    spec = LatticeSpec(1, 2, 6, 1.0)
    with pytest.raises(EmptyRoiError):
        roi_mask(_hist(spec, np.zeros((2,) + spec.shape, int)))


def test_marginal_counts_agree_with_joint_conditionals():
    spec = LatticeSpec(2, 2, 8, PITCH)
    f = make_gaussian_schell(GaussianSchellParams(1e6, 1e9), spec)
    h = sample_coincidences(joint_intensities(f, OpticalConfig(displacement=PITCH)), 10**5, 3)
    for photon in (0, 1):
        other = tuple(a for a in range(4) if a not in spec.photon_axes(photon))
        joint = [c.sum(axis=other) for c in conditional_split(h, photon)]
        mspec, marg = marginal_counts(h, photon)
        marg = marg.reshape((2, 2) + mspec.shape)
        split = marg.sum(axis=1 - photon)
        assert np.array_equal(joint[0], split[0]) and np.array_equal(joint[1], split[1])


def test_marginal_gradient_of_product_state_matches_oracle():
    f = _bump_state(20, PITCH)
    spec = f.spec
    pmf = joint_intensities(f, OpticalConfig(displacement=PITCH))
    comp = marginal_gradient(pmf, 1, PITCH)
    k = align(comp.values, comp.offset)
    g = f.values[spec.center_index(0), spec.center_index(1)]
    ref = weak_value_wavenumber(ComplexField(spec.photon_spec(), g), 0, 0)
    ok = valid_support(spec.photon_spec(), OpticalConfig(displacement=PITCH))
    ok = align(ok.astype(float), comp.offset, fill=0.0) > 0
    ok &= np.isfinite(ref) & np.isfinite(k)
    peak = np.abs(ref[ok]).max()
    assert np.sqrt(np.mean((k[ok] - ref[ok]) ** 2)) < 0.02 * peak


def test_marginal_gradient_ignores_constant_phase():
    spec = LatticeSpec(2, 2, 10, PITCH)
    f = make_gaussian_schell(GaussianSchellParams(1e6, 1e9), spec)
    grid = lattice_pattern_grid(spec)
    g = apply_added_phase(f, PhasePattern(np.full(grid["shape"], 1.3), grid["extent"], grid["center"]), 1)
    cfg = OpticalConfig(displacement=PITCH)
    a = marginal_gradient(joint_intensities(f, cfg), 1, PITCH).values
    b = marginal_gradient(joint_intensities(g, cfg), 1, PITCH).values
    assert np.allclose(a, b, equal_nan=True, atol=1e-9)


@pytest.mark.parametrize("key", [(1, 0), (1, 1)])
def test_noiseless_accuracy_and_second_order_scaling(key):
    errors = []
    for axis_len, pitch in ((16, PITCH), (32, PITCH / 2)):
        f = _bump_state(axis_len, pitch)
        cfg = OpticalConfig(displacement=pitch)
        est = estimate_gradients(joint_intensities(f, cfg), joint_intensities(f, cfg.with_axis("KY")), pitch)
        ref = weak_value_wavenumber(f, *key)
        ok = est.gradient.mask & np.isfinite(ref)
        peak = np.abs(ref[ok]).max()
        assert peak * 2 * pitch < 0.5
        errors.append(np.abs(est.gradient.components[key][ok] - ref[ok]).max() / peak)
    assert errors[0] < 0.01
    assert errors[0] / errors[1] >= 3.5


def test_estimate_gradients_layout():
    spec = LatticeSpec(2, 2, 10, PITCH)
    f = make_gaussian_schell(GaussianSchellParams(1e6, 1e8), spec)
    cfg = OpticalConfig(displacement=PITCH)
    kx, ky = joint_intensities(f, cfg), joint_intensities(f, cfg.with_axis("KY"))
    est = estimate_gradients(kx, ky, PITCH)
    g = est.gradient
    assert g.keys() == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert g.offset_meta["sampling"] == "node"
    assert g.offset_meta["evaluation_offsets_m"]["KX"] == [0.0, -PITCH, 0.0, -PITCH]
    for k in g.components.values():
        assert np.all(np.isfinite(k[g.mask]))
    assert np.allclose(est.intensity, est.amplitude**2)
    with pytest.raises(ArgumentError):
        estimate_gradients(kx, None, PITCH)


def test_recommend_ft_examples():
    lam, f = 800e-9, 0.2
    assert recommend_ft(1e6, 1e9, lam, f).decision is FTDecision.FOURIER_LENS
    assert recommend_ft(1e6, 0.0, lam, f).decision is FTDecision.FOUR_F
    rec = recommend_ft(1e6, 1e6, lam, f)
    b_star = rec.equal_width_sum - 1e6
    assert b_star * 1e-6 == pytest.approx(18.63, abs=0.01)
    w_pos, w_ft = conditional_fwhm(1e6, b_star, lam, f)
    assert w_pos == pytest.approx(w_ft, rel=1e-12)
    with pytest.raises(ArgumentError):
        recommend_ft(0.0, 1.0, lam, f)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e4, 1e8), st.floats(0.0, 1e10))
def test_recommendation_picks_narrower_width(a, b):
    rec = recommend_ft(a, b, 800e-9, 0.2)
    narrower = FTDecision.FOURIER_LENS if rec.fwhm_position < rec.fwhm_fourier else FTDecision.FOUR_F
    assert rec.decision is narrower
    # position width shrinks and Fourier width grows with a + b
    assert (rec.fwhm_position < rec.fwhm_fourier) == (a + b > rec.equal_width_sum)

