import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rgkam import FourierMap, Potential, SolverConfig, l1_norm, solve
from rgkam.ladder import ApproximationLadder
from rgkam.lattice import Composer, apply_G0, projector_P
from rgkam.oracle import lindstedt, newton_solve
from rgkam.rg import (ContractionFailure, MaxIterations, NonCauchy, RGError, ScaleLinearization,
                      SingularResonanceMatrix, StageProblem, geometric_ratio, hessian_floor, run_stage,
                      sigma00)
from rgkam.scales import LatticeScales

Q = 16
QUIET = SolverConfig(diagnostics=False)


def stage_chain(pot, omega, lam, M, upto, cfg=QUIET, Q=Q, eta=0.5):
    """Run stages 0..upto by hand and return (problems, results)."""
    lad = ApproximationLadder(pot, M=M)
    sc = LatticeScales(omega, Q, eta)
    x = FourierMap.zeros(pot.dim, Q)
    probs, results = [], []
    for j in range(upto + 1):
        p = StageProblem(j, x, lad.V(j), lad.V(j - 1), lam, sc)
        r = run_stage(p, cfg)
        probs.append(p)
        results.append(r)
        x = x + r.y
    return probs, results


@pytest.fixture(scope="module")
def j1_chain(golden, three_mode):
    """Stage j=1 of the three-mode potential, xbar != 0, diagnostics on."""
    return stage_chain(three_mode, golden, 1e-2, 2, 1, cfg=SolverConfig())


# ---------------------------------------------------------------- trivial and base cases

def test_zero_coupling_gives_zero(golden, cos1):
    probs, res = stage_chain(cos1, golden, 0.0, 8, 0, cfg=SolverConfig())
    r = res[0]
    assert not np.any(r.y.coeffs)
    for row in r.report["scales"]:
        assert row["iters"] == 0
        assert row["final_residual"] == 0.0
        assert row["ward_const"] == 0.0 and row["ward_deriv"] == 0.0
        assert row["sigma00_abs"] == 0.0


def test_base_stage_map_is_plain_composition(golden, cos1):
    # at j = 0 there is no background, so Wt(Y) = W^0(Y)
    sc = LatticeScales(golden, Q, 0.5)
    p = StageProblem(0, FourierMap.zeros(2, Q), cos1, None, 0.1, sc)
    rng = np.random.default_rng(3)
    from conftest import random_map
    Y = random_map(rng, 2, 4, 5).resized(Q) * 0.1
    wt, wf, _ = p.evaluate(Y)
    ref = Composer(cos1, 0.1, Q)(Y).w
    assert np.allclose(wt.coeffs, ref.coeffs, atol=1e-15)
    assert np.array_equal(wt.coeffs, wf.coeffs)


@pytest.mark.parametrize("lam", [1e-4, 1e-3])
def test_agrees_with_full_newton(golden, cos1, lam):
    rep = solve(cos1, golden, lam, 9, lattice_bound=Q, solver=QUIET)
    ref = newton_solve(cos1, golden, lam, Q)
    assert rep.ok
    assert l1_norm(rep.X - ref.X) <= 1e-10 * l1_norm(ref.X)


def test_first_order_term(golden, cos1):
    lam = 1e-6
    rep = solve(cos1, golden, lam, 9, lattice_bound=Q, solver=QUIET)
    # x = lambda G0 P dV(theta) + O(lambda^2)
    x1 = apply_G0(projector_P(Composer(cos1, 1.0, Q).exact_gradient()), golden)
    assert l1_norm(rep.X - x1 * lam) <= 10 * lam**2
    assert l1_norm(x1 - lindstedt(cos1, golden, 1, Q)[0]) <= 1e-14 * l1_norm(x1)


# ---------------------------------------------------------------- fixed-point structure

def test_scale_fixed_point_and_support(j1_chain):
    probs, res = j1_chain
    p, r = probs[1], res[1]
    for st in r.states:
        G = p.scales.gamma_lt(st.n)
        assert not np.any(st.z.coeffs[:, G == 0])
        R = st.z.coeffs - G * st.w_at_z.coeffs
        ref = max(l1_norm(st.z), 1e-300)
        assert np.sum(np.sqrt(np.sum(np.abs(R) ** 2, axis=0))) <= max(1e-12 * ref, 1e-15 * ref + 1e-20)
    assert r.states[-1].z.mean().tolist() == [0, 0]


def test_mean_mode_residual_base_stage(golden, three_mode):
    _, res = stage_chain(three_mode, golden, 1e-2, 2, 0)
    assert res[0].report["mean_residual"] <= 10 * QUIET.stage_tol


def test_last_scale_covers_window(j1_chain):
    probs, res = j1_chain
    sc = probs[1].scales
    G = sc.gamma_lt(sc.n_complete)
    k = sc.kappa.copy()
    k[sc.origin] = 1.0
    g0 = 1.0 / k**2
    g0[sc.origin] = 0.0
    assert np.allclose(G, g0, rtol=1e-15, atol=0)
    assert res[1].states[-1].n == sc.n_complete


@pytest.mark.parametrize("seed", range(20))
def test_jacobian_matches_finite_differences(j1_chain, seed):
    probs, res = j1_chain
    p = probs[1]
    st = res[1].states[2]
    G = p.scales.gamma_lt(st.n)
    _, _, H = p.evaluate(st.z, hessian=True)
    lin = ScaleLinearization(p, H, G, QUIET)
    rng = np.random.default_rng(seed)
    v = rng.normal(size=lin.shape) + 1j * rng.normal(size=lin.shape)
    v = FourierMap(v * lin.active, True).symmetrized().coeffs
    v = v / np.abs(v).sum()

    def F(c):
        wt, _, _ = p.evaluate(FourierMap(c, True))
        return c - G * wt.coeffs

    h = 1e-3 * l1_norm(st.z)
    fd = (F(st.z.coeffs + h * v) - F(st.z.coeffs - h * v)) / (2 * h)
    jv = lin._scatter(lin.jac_active(v[:, lin.active].ravel()))
    assert np.abs(fd - jv).sum() <= 1e-7 * np.abs(jv).sum()


# ---------------------------------------------------------------- Ward identities

def test_ward_identities_base_stage(golden, cos1):
    _, res = stage_chain(cos1, golden, 1e-3, 8, 0, cfg=SolverConfig(h_norm=False))
    for row in res[0].report["scales"]:
        assert row["ward_const"] <= 1e-15
        assert row["ward_deriv"] <= 1e-15


def test_ward_identities_with_background(j1_chain):
    probs, res = j1_chain
    assert l1_norm(probs[1].xbar) > 1e-3
    for r in res:
        for row in r.report["scales"]:
            assert row["ward_const"] <= 1e-15
            assert row["ward_deriv"] <= 1e-13


def test_ward_identities_fail_off_the_fixed_point(j1_chain):
    from rgkam.rg import ward_residual_constant
    probs, res = j1_chain
    p, st = probs[1], res[1].states[2]
    import copy
    bad = copy.copy(st)
    z = st.z.coeffs.copy()
    z[0, Q + 1, Q] += 1e-4
    z[0, Q - 1, Q] += 1e-4
    bad.w_at_z = p.evaluate(FourierMap(z, True))[0]
    assert ward_residual_constant(p, st) <= 1e-15
    assert ward_residual_constant(p, bad) > 1e-10


# ---------------------------------------------------------------- resonance diagnostics

def test_sigma_decays_across_scales(j1_chain, three_mode):
    _, res = j1_chain
    sig = [row["sigma00_abs"] for row in res[1].report["scales"]]
    floor = hessian_floor(three_mode, 1e-2)
    assert sig[0] > 1e3 * floor
    assert geometric_ratio(sig, floor) < 1
    assert all(b < a for a, b in zip(sig[:3], sig[1:4]))


def test_sigma_is_real_and_even_in_kappa(j1_chain, three_mode):
    probs, res = j1_chain
    floor = hessian_floor(three_mode, 1e-2)
    p = probs[1]
    for st in res[1].states[:3]:
        h = 1e-2 * p.scales.eta ** (st.n + 1)
        s0, _ = sigma00(p, st.hessian, st.n, QUIET)
        sp, _ = sigma00(p, st.hessian, st.n, QUIET, shift=h)
        sm, _ = sigma00(p, st.hessian, st.n, QUIET, shift=-h)
        assert np.abs(s0.imag).max() <= floor
        # even: the central difference vanishes while the shift itself is felt at order h^2
        assert np.abs(sp - sm).max() <= 1e-9 * np.abs(sp - s0).max()
        s2, _ = sigma00(p, st.hessian, st.n, QUIET, shift=h / 2)
        assert np.abs(sp - s0).max() / np.abs(s2 - s0).max() == pytest.approx(4, rel=0.05)


def test_dsigma_step_independent_off_zero(j1_chain):
    probs, res = j1_chain
    p = probs[1]
    st = res[1].states[1]
    e = p.scales.eta ** (st.n + 1)
    k0 = 0.3 * e

    def d(h):
        a, _ = sigma00(p, st.hessian, st.n, QUIET, shift=k0 + h)
        b, _ = sigma00(p, st.hessian, st.n, QUIET, shift=k0 - h)
        return (a - b) / (2 * h)

    d1, d2 = d(1e-2 * e), d(5e-3 * e)
    assert np.abs(d1).max() > 1e-3
    assert np.abs(d1 - d2).max() <= 1e-3 * np.abs(d2).max()


def test_dsigma_reported_is_zero_at_origin(j1_chain):
    _, res = j1_chain
    for row in res[1].report["scales"]:
        assert row["dsigma00_abs"] <= 1e-9 * max(row["sigma00_abs"], 1e-300) + 1e-11


def test_h_norm_certificate_small_coupling(golden, three_mode):
    _, res = stage_chain(three_mode, golden, 1e-4, 2, 1, cfg=SolverConfig())
    for r in res:
        for row in r.report["scales"]:
            assert 1.0 <= row["H_norm"] <= 2.0


def test_h_norm_excess_is_linear_in_coupling(golden, three_mode):
    cfg = SolverConfig()
    ex = []
    for lam in (1e-4, 2e-4):
        _, res = stage_chain(three_mode, golden, lam, 2, 1, cfg=cfg)
        ex.append(np.array([row["H_norm"] - 1 for row in res[1].report["scales"][:3]]))
    assert np.allclose(ex[1] / ex[0], 2.0, rtol=0.1)


# ---------------------------------------------------------------- helpers and errors

@pytest.mark.parametrize("values,floor,expected", [
    ([1.0, 0.5, 0.25, 0.125], 0.0, 0.5),
    ([0.0, 0.0, 0.0], 0.0, 0.0),
    ([1e-20, 2e-20, 1e-20], 1e-18, 0.0),
    ([1.0, 1e-20, 1e-20], 1e-18, 0.0),
    ([1e-20, 1e-20, 1.0], 1e-18, float("inf")),
])
def test_geometric_ratio_examples(values, floor, expected):
    assert geometric_ratio(values, floor) == pytest.approx(expected)


@given(st.floats(1e-3, 0.99), st.floats(1e-6, 1e3), st.integers(2, 12))
def test_geometric_ratio_recovers_rate(r, c, n):
    v = c * r ** np.arange(n)
    assert geometric_ratio(v) == pytest.approx(r, rel=1e-9)


def test_hessian_floor_example(cos1):
    # sum over q = +-(1,0) of |q|^2 |v| = 1
    assert hessian_floor(cos1, 1e-3) == pytest.approx(16 * np.finfo(float).eps * 1e-3)


def test_error_hierarchy():
    for cls in (MaxIterations, ContractionFailure, NonCauchy, SingularResonanceMatrix):
        assert issubclass(cls, RGError)
    e = NonCauchy("x", {"scales": []})
    assert e.diagnostics == {"scales": []}


def test_max_iterations_raised(golden, cos1):
    cfg = SolverConfig(max_newton=0, diagnostics=False)
    with pytest.raises(MaxIterations):
        stage_chain(cos1, golden, 1e-3, 8, 0, cfg=cfg)


def test_solve_reports_failure_instead_of_raising(golden, cos1):
    rep = solve(cos1, golden, 1e-3, 9, lattice_bound=Q, solver=SolverConfig(max_newton=0, diagnostics=False))
    assert not rep.ok
    assert "MaxIterations" in rep.status
    assert rep.stages[-1]["kind"] == "MaxIterations"


def test_strong_coupling_breaks_down(golden):
    pot = Potential.from_modes(2, {(1, 0): 0.5, (-1, 0): 0.5, (1, -1): 0.5, (-1, 1): 0.5})
    rep = solve(pot, golden, 0.64, 0, lattice_bound=Q, solver=QUIET)
    assert not rep.ok
