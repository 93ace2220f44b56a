import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import jv

from rgkam.lattice import (AliasingError, Composer, FourierMap, Potential, ResonantFrequencyError,
                           TruncationWarning, apply_D2, apply_G0, compose_w0, evaluate, grid_transform,
                           inverse_grid_transform, l1_norm, map_from_json, map_to_json, potential_from_json,
                           potential_to_json, projector_P, shift, weighted_norm)

from conftest import random_map


@st.composite
def maps(draw, max_d=3, max_Q=6, real=True):
    d = draw(st.integers(1, max_d))
    Q = draw(st.integers(1, max_Q if d < 3 else 3))
    seed = draw(st.integers(0, 2**31 - 1))
    n = draw(st.integers(0, 12))
    return random_map(np.random.default_rng(seed), d, Q, n, real=real)


# ---------------------------------------------------------------- eval

def test_eval_zero_map():
    assert np.all(evaluate(FourierMap.zeros(2, 3), [0.3, 1.1]) == 0)


def test_eval_cosine_at_origin():
    m = FourierMap.from_modes(1, 2, {(1,): [0.5], (-1,): [0.5]})
    assert evaluate(m, [0.0])[0] == pytest.approx(1.0, abs=1e-15)


def test_eval_two_term_direct_sum():
    m = FourierMap.from_modes(2, 2, {(1, 0): [-0.5j, 0], (-1, 0): [0.5j, 0]})
    theta = np.array([np.pi / 2, 0.0])
    # direct two-term summation of e^{-i q.theta} x(q)
    direct = np.exp(-1j * np.pi / 2) * np.array([-0.5j, 0]) + np.exp(1j * np.pi / 2) * np.array([0.5j, 0])
    got = evaluate(m, theta)
    assert np.allclose(got, direct, atol=1e-15)
    assert np.allclose(got, [-1.0, 0.0], atol=1e-15)


# ---------------------------------------------------------------- grid transforms

def test_grid_zero_roundtrip():
    z = FourierMap.zeros(2, 4)
    s = grid_transform(z, 16)
    assert not np.any(s)
    assert not np.any(inverse_grid_transform(s, 4).coeffs)


@pytest.mark.parametrize("q", [(0, 0), (1, 0), (-3, 2), (4, 4)])
def test_grid_single_mode_matches_direct_dft(q):
    Q, N = 4, 16
    m = FourierMap.from_modes(2, Q, {q: [1.0, 2.0j]}, real=False)
    s = grid_transform(m, N)
    t = 2 * np.pi * np.arange(N) / N
    T1, T2 = np.meshgrid(t, t, indexing="ij")
    direct = np.exp(-1j * (q[0] * T1 + q[1] * T2))
    # relative to the coefficient sizes 1 and 2
    assert np.max(np.abs(s[0] - direct)) < 1e-14
    assert np.max(np.abs(s[1] - 2j * direct)) < 2e-14
    back = inverse_grid_transform(s, Q, real=False)
    assert np.max(np.abs(back.coeffs - m.coeffs)) < 1e-14


def test_grid_too_coarse_raises():
    with pytest.raises(AliasingError):
        grid_transform(FourierMap.zeros(1, 5), 11)


@settings(max_examples=40, deadline=None)
@given(maps())
def test_grid_roundtrip_property(m):
    Q = m.lattice_bound
    back = inverse_grid_transform(grid_transform(m, 4 * Q), Q)
    scale = max(np.abs(m.coeffs).max(), 1e-300)
    assert np.max(np.abs(back.coeffs - m.coeffs)) <= 1e-12 * scale


def test_grid_roundtrip_minimal_grid():
    m = random_map(np.random.default_rng(3), 2, 8, 10)
    back = inverse_grid_transform(grid_transform(m, 18), 8)
    assert np.max(np.abs(back.coeffs - m.coeffs)) <= 1e-12 * np.abs(m.coeffs).max()


# ---------------------------------------------------------------- norms

def test_l1_examples():
    assert l1_norm(FourierMap.zeros(2, 2)) == 0
    m = FourierMap.from_modes(2, 2, {(1, 1): [3j, 4j]}, real=False)
    assert l1_norm(m) == pytest.approx(5.0)
    m = FourierMap.from_modes(2, 2, {(1, 0): [1, 0], (0, 1): [0, 1]}, real=False)
    assert l1_norm(m) == pytest.approx(2.0)


def test_weighted_norm_examples():
    m = FourierMap.from_modes(2, 2, {(1, 1): [1, 0]}, real=False)
    assert weighted_norm(m, np.log(2)) == pytest.approx(4.0, rel=1e-15)
    r = random_map(np.random.default_rng(0), 2, 4, 8)
    assert weighted_norm(r, 0.0) == pytest.approx(l1_norm(r), rel=1e-15)


def test_weighted_norm_direct_sum():
    # x(q) = exp(-|q|_1) (1, 0) on the window
    Q = 6
    modes = {(a, b): [np.exp(-(abs(a) + abs(b))), 0] for a in range(-Q, Q + 1) for b in range(-Q, Q + 1)}
    m = FourierMap.from_modes(2, Q, modes)
    sigma = 0.4
    direct = sum(np.exp(sigma * (abs(a) + abs(b))) * np.exp(-(abs(a) + abs(b))) for a, b in modes)
    assert weighted_norm(m, sigma) == pytest.approx(direct, rel=1e-13)


def test_weighted_norm_errors():
    m = FourierMap.from_modes(1, 3, {(3,): [1.0]})
    with pytest.raises(ValueError):
        weighted_norm(m, -1.0)
    with pytest.raises(OverflowError):
        weighted_norm(m, 400.0)


# ---------------------------------------------------------------- shift

def test_shift_identity_and_additivity():
    m = random_map(np.random.default_rng(1), 2, 5, 9)
    assert np.array_equal(shift(m, [0, 0]).coeffs, m.coeffs)
    a, b = np.array([0.3, -1.2]), np.array([2.1, 0.4])
    two = shift(shift(m, a), b)
    one = shift(m, a + b)
    assert np.max(np.abs(two.coeffs - one.coeffs)) <= 1e-14 * np.abs(m.coeffs).max()


@settings(max_examples=30, deadline=None)
@given(maps(), st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_shift_real_preserves_l1(m, beta):
    b = np.asarray(beta[: m.dim])
    s = shift(m, b)
    assert l1_norm(s) == pytest.approx(l1_norm(m), rel=1e-14, abs=1e-300)
    assert s.hermitian_defect() <= 1e-13 * max(1.0, np.abs(m.coeffs).max())


@settings(max_examples=30, deadline=None)
@given(maps(), st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_shift_imaginary_bounded_by_weighted_norm(m, beta):
    b = np.asarray(beta[: m.dim])
    lhs = weighted_norm(shift(m, 1j * b), 0.0)
    rhs = weighted_norm(m, float(np.max(np.abs(b))))
    assert lhs <= rhs * (1 + 1e-13)


def test_shift_is_translation():
    m = random_map(np.random.default_rng(2), 2, 4, 6)
    beta, theta = np.array([0.7, -0.2]), np.array([1.3, 2.9])
    assert np.allclose(evaluate(shift(m, beta), theta), evaluate(m, theta - beta), atol=1e-13)


# ---------------------------------------------------------------- D2, G0, P

def test_G0_D2_P_is_minus_P(golden):
    m = random_map(np.random.default_rng(4), 2, 6, 15)
    lhs = apply_G0(apply_D2(projector_P(m), golden), golden)
    rhs = projector_P(m)
    assert np.max(np.abs(lhs.coeffs + rhs.coeffs)) <= 1e-14 * np.abs(m.coeffs).max()


def test_D2_single_mode(golden):
    q = (2, -1)
    m = FourierMap.from_modes(2, 3, {q: [1.0, 1j]}, real=False)
    k = golden @ np.array(q)
    assert np.allclose(apply_D2(m, golden)[q], -(k**2) * np.array([1.0, 1j]), rtol=1e-15)


def test_P_kills_constant():
    m = FourierMap.from_modes(2, 2, {(0, 0): [1.0, 2.0]})
    assert not np.any(projector_P(m).coeffs)


def test_G0_rejects_resonance():
    m = FourierMap.from_modes(2, 3, {(1, 0): [1.0, 0]})
    with pytest.raises(ResonantFrequencyError) as e:
        apply_G0(m, np.array([1.0, 0.5]))
    assert abs(np.asarray(e.value.q) @ np.array([1.0, 0.5])) == 0


@settings(max_examples=25, deadline=None)
@given(maps(max_d=2))
def test_operators_keep_hermitian(m):
    om = np.array([1.0, (1 + 5**0.5) / 2])[: m.dim] if m.dim == 2 else np.array([1.0])
    for out in (apply_D2(m, om), projector_P(m), apply_G0(projector_P(m), om), shift(m, np.ones(m.dim))):
        assert out.real
        assert out.hermitian_defect() <= 1e-13 * max(1.0, np.abs(out.coeffs).max())


# ---------------------------------------------------------------- composition

def test_compose_at_zero_is_exact(cos1, golden):
    pot = Potential.from_modes(2, {(1, 0): 0.5, (-1, 0): 0.5, (2, -1): 0.3 - 0.1j, (-2, 1): 0.3 + 0.1j})
    lam = 0.37
    w = compose_w0(pot, FourierMap.zeros(2, 8), lam)
    for q, v in pot.modes():
        assert np.array_equal(w[q], lam * (-1j * np.array(q, float) * v))
    assert sum(1 for _ in w.modes()) == sum(1 for _ in pot.modes())


def test_compose_lambda_zero(cos1):
    X = random_map(np.random.default_rng(5), 2, 6, 8)
    assert not np.any(compose_w0(cos1, X, 0.0).coeffs)


def _bessel_reference(eps, lam, Q):
    # lambda d/dtheta cos(theta + eps sin theta) = -lambda sum_n J_n(eps) sin((n+1) theta)
    modes = {}
    for m in range(1, Q + 1):
        c = jv(m - 1, eps) + (-1) ** m * jv(m + 1, eps)
        modes[(m,)] = [-lam * 0.5j * c]
        modes[(-m,)] = [lam * 0.5j * c]
    return FourierMap.from_modes(1, Q, modes)


@pytest.mark.parametrize("eps", [1e-4, 1e-2, 0.3])
def test_compose_cosine_with_sine_shift(eps):
    Q, lam = 16, 0.7
    pot = Potential.from_modes(1, {(1,): 0.5, (-1,): 0.5})
    X = FourierMap.from_modes(1, Q, {(1,): [0.5j * eps], (-1,): [-0.5j * eps]})  # eps sin(theta)
    w = compose_w0(pot, X, lam)
    ref = _bessel_reference(eps, lam, Q)
    assert np.max(np.abs(w.coeffs - ref.coeffs)) < 1e-15
    # first-order expansion: -sin th - (eps/2) sin 2 th, error O(eps^2)
    first = FourierMap.from_modes(1, Q, {(1,): [-0.5j * lam], (-1,): [0.5j * lam],
                                         (2,): [-0.25j * lam * eps], (-2,): [0.25j * lam * eps]})
    assert l1_norm(w - first) <= lam * eps**2


def test_compose_tail_warning(cos1):
    X = FourierMap.from_modes(2, 2, {(1, 0): [2.0, 0], (-1, 0): [2.0, 0]})
    with pytest.warns(TruncationWarning):
        compose_w0(cos1, X, 1.0, tail_tol=1e-12)


def test_compose_tail_estimate_small_for_band_limited(cos1):
    X = FourierMap.from_modes(2, 16, {(1, 0): [1e-3j, 0], (-1, 0): [-1e-3j, 0]})
    c = Composer(cos1, 1.0, 16)(X)
    assert c.tail < 1e-15
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        compose_w0(cos1, X, 1.0)


def test_compose_keeps_hermitian(cos1):
    X = random_map(np.random.default_rng(6), 2, 6, 10) * 0.05
    w = Composer(cos1, 0.5, 6)(X).w
    assert w.real
    assert w.hermitian_defect() <= 1e-13


def test_hessian_action_matches_difference_quotient(cos1):
    X = random_map(np.random.default_rng(7), 2, 8, 10) * 0.01
    dX = random_map(np.random.default_rng(8), 2, 8, 10)
    comp = Composer(cos1, 0.3, 8)
    c = comp(X, hessian=True)
    jv_ = comp.hessian_action(c.hessian, dX.coeffs)
    h = 1e-6
    fd = (comp(X + dX * h).w.coeffs - comp(X - dX * h).w.coeffs) / (2 * h)
    assert np.max(np.abs(jv_ - fd)) <= 1e-6 * np.max(np.abs(jv_))


# ---------------------------------------------------------------- json

def test_map_json_roundtrip():
    m = random_map(np.random.default_rng(9), 2, 5, 12)
    back = map_from_json(json.loads(json.dumps(map_to_json(m))))
    assert np.array_equal(back.coeffs, m.coeffs)
    assert back.real == m.real


def test_potential_json_roundtrip(cos1):
    back = potential_from_json(json.loads(json.dumps(potential_to_json(cos1))))
    assert np.array_equal(back.coeffs, cos1.coeffs)


def test_fourier_map_rejects_bad_shape():
    with pytest.raises(ValueError):
        FourierMap(np.zeros((2, 4, 4)))
    with pytest.raises(ValueError):
        FourierMap.from_modes(1, 2, {(3,): [1.0]})


def test_fourier_map_is_immutable():
    m = FourierMap.zeros(1, 2)
    with pytest.raises(ValueError):
        m.coeffs[0, 0] = 1.0
