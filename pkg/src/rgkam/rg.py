"""Inner multiscale renormalization of one ladder stage.

At stage j the correction y to the accepted approximation xbar solves

    y = G0 P Wt(y),   Wt(Y) = W^j(xbar + Y) - W^{j-1}(xbar),

with W^j(X) = lambda dV^j(theta + X).  The small-divisor inverse G0 is
switched on scale by scale: at scale n the cumulative fixed point

    z_n = Gamma_<n Wt(z_n)

is solved by Newton's method, warm-started from z_{n-1}.  Once Gamma_<n
agrees with G0 on the whole window, z_n is the stage correction.

Linearizations are applied matrix-free: pi0 = DWt(z_n) is multiplication
by lambda d^2V^j(theta + xbar + z_n), evaluated on the composition grid.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .lattice import Composer, FourierMap, Potential, _flip, l1_norm, lattice_axes
from .scales import LatticeScales

log = logging.getLogger(__name__)


class RGError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MaxIterations(RGError):
    pass


class ContractionFailure(RGError):
    pass


class NonCauchy(RGError):
    pass


class SingularResonanceMatrix(RGError):
    pass


@dataclass
class SolverConfig:
    scale_tol: float = 1e-12
    stage_tol: float = 1e-11
    max_newton: int = 50
    max_halvings: int = 8
    max_picard: int = 200
    gmres_rtol: float = 1e-12
    gmres_restart: int = 60
    gmres_maxiter: int = 40
    probes: list | None = None
    diagnostics: bool = True
    h_norm: bool = True
    early_stop: bool = False
    continuation: bool = False
    continuation_steps: int = 6
    oversample: int = 4


def unit_probes(d: int) -> list[tuple[int, ...]]:
    out = []
    for i in range(d):
        for s in (1, -1):
            q = [0] * d
            q[i] = s
            out.append(tuple(q))
    return out


class StageProblem:
    """Wt(Y) = W^j(xbar + Y) - W^{j-1}(xbar) on a fixed lattice window."""

    def __init__(self, j: int, xbar: FourierMap, Vj: Potential, Vprev: Potential | None, lam: float,
                 scales: LatticeScales, oversample: int = 4):
        self.j = j
        self.xbar = xbar
        self.lam = float(lam)
        self.scales = scales
        self.Q = xbar.lattice_bound
        self.d = xbar.dim
        self.comp = Composer(Vj, lam, self.Q, oversample=oversample)
        if Vprev is None or not np.any(Vprev.coeffs) or self.lam == 0.0:
            self.U = FourierMap.zeros(self.d, self.Q)
        else:
            prev = Composer(Vprev, lam, self.Q, grid=self.comp.N)
            self.U = prev(xbar).w
        self.tail = 0.0
        self.ramp = 1.0  # homotopy factor on lambda, used by continuation

    def evaluate(self, z: FourierMap, hessian: bool = False):
        """(Wt(z), W^j(xbar+z), hessian samples or None)."""
        c = self.comp(self.xbar + z, hessian=hessian)
        self.tail = max(self.tail, c.tail)
        w, H = c.w, c.hessian
        if self.ramp != 1.0:
            w = w * self.ramp
            H = None if H is None else H * self.ramp
            return w - self.U * self.ramp, w, H
        return w - self.U, w, H

    def pi0(self, H: np.ndarray, delta: np.ndarray) -> np.ndarray:
        return self.comp.hessian_action(H, delta)


@dataclass
class ScaleState:
    j: int
    n: int
    z: FourierMap
    w_at_z: FourierMap
    w_full: FourierMap
    hessian: np.ndarray | None
    iters: int
    residual: float
    convergence_log: list = field(default_factory=list)
    contraction_estimate: float = 0.0
    ward_residual_constant: float | None = None
    ward_residual_derivative: float | None = None


def _gmres(apply, b: np.ndarray, cfg: SolverConfig, what: str) -> np.ndarray:
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros_like(b)
    A = LinearOperator((b.size, b.size), matvec=apply, dtype=complex)
    x, info = gmres(A, b, rtol=cfg.gmres_rtol, atol=0.0, restart=cfg.gmres_restart,
                    maxiter=cfg.gmres_maxiter)
    if info != 0:
        res = np.linalg.norm(apply(x) - b) / nb
        if not np.isfinite(res) or res > 1e-6:
            raise SingularResonanceMatrix(f"{what}: linear solve failed (relative residual {res:.2e})")
    return x


class ScaleLinearization:
    """Linear algebra around z_n for a kernel G on the lattice (G = Gamma_<n or a shift of it)."""

    def __init__(self, problem: StageProblem, H: np.ndarray, G: np.ndarray, cfg: SolverConfig):
        self.p = problem
        self.H = H
        self.G = G
        self.active = G != 0
        self.cfg = cfg
        self.shape = (problem.d,) + G.shape

    def pi0(self, delta: np.ndarray) -> np.ndarray:
        return self.p.pi0(self.H, delta)

    def _scatter(self, v):
        out = np.zeros(self.shape, dtype=complex)
        out[:, self.active] = v.reshape(self.p.d, -1)
        return out

    def jac_active(self, v):
        """(I - G pi0) restricted to the active modes."""
        full = self._scatter(v)
        return v - (self.G * self.pi0(full))[:, self.active].ravel()

    def solve_active(self, rhs_full: np.ndarray, what: str) -> np.ndarray:
        b = rhs_full[:, self.active].ravel()
        return self._scatter(_gmres(self.jac_active, b, self.cfg, what))

    def dw(self, e: np.ndarray) -> np.ndarray:
        """Derivative of the scale-n effective map at 0 in direction e: pi0 (e + s)."""
        pe = self.pi0(e)
        if not np.any(pe):
            return pe
        s = self.solve_active(self.G * pe, "effective linearization")
        return self.pi0(e + s)


def _unit(shape, Q, alpha, q):
    e = np.zeros(shape, dtype=complex)
    e[(alpha,) + tuple(k + Q for k in q)] = 1.0
    return e


def solve_scale(problem: StageProblem, n: int, z_prev: FourierMap, cfg: SolverConfig) -> ScaleState:
    """Cumulative fixed point z = Gamma_<n Wt(z), damped Newton with Picard fallback."""
    G = problem.scales.gamma_lt(n)
    if cfg.continuation:
        return _solve_scale_continued(problem, n, z_prev, G, cfg)
    return _newton(problem, n, z_prev, G, cfg)


ROUNDOFF_FLOOR = 16 * np.finfo(float).eps


def _residual(problem, G, z, hessian):
    """Returns (Wt, W, hessian, R, |R|, acceptance threshold scale).

    Wt is a difference of two O(lambda) compositions, so |R| cannot drop
    below the roundoff of W itself; that floor joins the relative target.
    """
    wt, wf, H = problem.evaluate(z, hessian=hessian)
    R = z.coeffs - G * wt.coeffs
    ref = max(l1_norm(z), float(np.sum(np.abs(G * wt.coeffs))))
    floor = ROUNDOFF_FLOOR * float(np.sum(np.abs(G * wf.coeffs)))
    return wt, wf, H, R, float(np.sum(np.sqrt(np.sum(np.abs(R) ** 2, axis=0)))), (ref, floor)


def _converged(r, ref, tol):
    return r == 0.0 or r <= max(tol * ref[0], ref[1])


def _newton(problem: StageProblem, n: int, z0: FourierMap, G: np.ndarray, cfg: SolverConfig) -> ScaleState:
    z = FourierMap(z0.coeffs * (G != 0), True)
    wt, wf, H, R, r, ref = _residual(problem, G, z, True)
    history = [(0, r)]
    it = 0
    while not _converged(r, ref, cfg.scale_tol):
        if it >= cfg.max_newton:
            raise MaxIterations(f"scale {n}: no convergence in {cfg.max_newton} Newton steps",
                                {"log": history})
        lin = ScaleLinearization(problem, H, G, cfg)
        try:
            step = lin.solve_active(-R, f"Newton step at scale {n}")
        except SingularResonanceMatrix:
            return _picard(problem, n, z, G, cfg, history)
        t = 1.0
        for _ in range(cfg.max_halvings + 1):
            z_new = FourierMap(z.coeffs + t * step, True).symmetrized()
            out = _residual(problem, G, z_new, True)
            if out[4] < r:
                break
            t *= 0.5
        else:
            log.info("scale %d: Newton stalled, trying Picard", n)
            return _picard(problem, n, z, G, cfg, history)
        z = z_new
        wt, wf, H, R, r, ref = out
        it += 1
        history.append((it, r))
    return ScaleState(problem.j, n, z, wt, wf, H, it, r, history,
                      _contraction(problem, H, G, cfg))


def _picard(problem, n, z, G, cfg, history):
    rates = []
    r_old = history[-1][1]
    for k in range(1, cfg.max_picard + 1):
        wt, _, _ = problem.evaluate(z)
        z = FourierMap(G * wt.coeffs, True).symmetrized()
        wt, wf, H, R, r, ref = _residual(problem, G, z, True)
        history.append((len(history), r))
        if _converged(r, ref, cfg.scale_tol):
            return ScaleState(problem.j, n, z, wt, wf, H, len(history) - 1, r, history,
                              _contraction(problem, H, G, cfg))
        rates.append(r / r_old if r_old > 0 else 0.0)
        r_old = r
        if len(rates) >= 3 and min(rates[-3:]) >= 1.0:
            raise ContractionFailure(f"scale {n}: Picard contraction factor {rates[-1]:.3f} >= 1",
                                     {"log": history})
    raise MaxIterations(f"scale {n}: Picard fallback did not converge", {"log": history})


def _solve_scale_continued(problem, n, z_prev, G, cfg):
    """Geometric ramp lambda_k -> lambda with xbar frozen; each step warm-starts the next."""
    z = z_prev
    for k in range(cfg.continuation_steps, -1, -1):
        problem.ramp = 2.0 ** (-k)
        try:
            st = _newton(problem, n, z, G, cfg)
        finally:
            problem.ramp = 1.0
        z = st.z
    return st


def _contraction(problem, H, G, cfg, iters: int = 5) -> float:
    """Power-iteration estimate of the spectral radius of Gamma_<n pi0."""
    if H is None or not np.any(G):
        return 0.0
    rng = np.random.default_rng(0)
    v = rng.standard_normal((problem.d,) + G.shape) * (G != 0)
    nv = np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        v = v / nv
        v = G * problem.pi0(H, v)
        nv = np.linalg.norm(v)
        est = nv
        if nv == 0:
            return 0.0
    return float(est)


# ---------------------------------------------------------------- Ward identities

def _xbar_pairing(problem: StageProblem, chibar: np.ndarray, u: np.ndarray) -> np.ndarray:
    """sum_q i q^g chibar(omega.q) xbar^b(q) u^b(-q), a d-vector."""
    x = problem.xbar.coeffs
    pair = np.sum(x * _flip(u, problem.d), axis=0) * chibar
    axes = lattice_axes(problem.d, problem.Q)
    return np.array([np.sum(1j * q * pair) for q in axes])


def ward_residual_constant(problem: StageProblem, st: ScaleState) -> float:
    """l1 norm of mean Wt(z_n) minus the xbar-weighted sum over chi_bar_n."""
    chibar = problem.scales.chi_bar(st.n)
    lhs = st.w_at_z.mean()
    rhs = _xbar_pairing(problem, chibar, st.w_at_z.coeffs)
    return float(np.sum(np.abs(lhs - rhs)))


def ward_residual_derivative(problem: StageProblem, st: ScaleState, cfg: SolverConfig,
                             lin: ScaleLinearization | None = None) -> float:
    """Max over probes p and components a of the derivative identity residual."""
    probes = cfg.probes or unit_probes(problem.d)
    lin = lin or ScaleLinearization(problem, st.hessian, problem.scales.gamma_lt(st.n), cfg)
    chibar = problem.scales.chi_bar(st.n)
    Q, d = problem.Q, problem.d
    worst = 0.0
    for p in probes:
        wm = st.w_full[tuple(-k for k in p)]
        for a in range(d):
            e = _unit(lin.shape, Q, a, p)
            u = lin.dw(e)
            lhs = u[(slice(None),) + (Q,) * d]
            rhs = 1j * np.asarray(p, dtype=float) * wm[a] + _xbar_pairing(problem, chibar, u)
            worst = max(worst, float(np.sum(np.abs(lhs - rhs))))
    return worst


# ---------------------------------------------------------------- resonance diagnostics

@dataclass
class ResonanceDiagnostics:
    n: int
    sigma_00: np.ndarray
    dsigma_00: np.ndarray
    rho_offdiag_decay: float | None
    H_norm: float | None


def sigma00(problem: StageProblem, H: np.ndarray, n: int, cfg: SolverConfig, shift: float = 0.0):
    """d x d block at (0, 0) of the scale-n effective linearization, kernel shifted by kappa."""
    G = problem.scales.gamma_lt(n, shift=shift)
    G[problem.scales.origin] = 0.0
    lin = ScaleLinearization(problem, H, G, cfg)
    Q, d = problem.Q, problem.d
    cols = [lin.dw(_unit(lin.shape, Q, a, (0,) * d)) for a in range(d)]
    sig = np.stack([c[(slice(None),) + (Q,) * d] for c in cols], axis=1)
    return sig, cols


def _power_decay(cols, d: int, Q: int) -> float | None:
    mag = np.sqrt(sum(np.sum(np.abs(c) ** 2, axis=0) for c in cols))
    n1 = np.sum(np.abs(np.stack(lattice_axes(d, Q))), axis=0)
    ok = (n1 > 0) & (mag > 1e-14 * max(mag.max(), 1e-300))
    if ok.sum() < 3 or len(np.unique(n1[ok])) < 2:
        return None
    slope = np.polyfit(np.log(n1[ok]), np.log(mag[ok]), 1)[0]
    return float(-slope)


def h_norm(problem: StageProblem, H: np.ndarray, n: int, cfg: SolverConfig,
           lin: ScaleLinearization | None = None) -> float:
    """Block l1 operator norm of I + pi_n Gamma_{n-1} on modes with |omega.q| <= eta^(n-2).

    pi_n is the effective linearization at scale n, so this operator equals
    (1 - pi0 Gamma_<n)^-1 (1 - pi0 Gamma_<n-1).  Columns away from the
    support of Gamma_{n-1} are unit vectors.  The value returned is
    max over columns p of sum_q ||H(q, p)||_2, an upper bound for the
    induced norm.
    """
    sc = problem.scales
    lin = lin or ScaleLinearization(problem, H, sc.gamma_lt(n), cfg)
    low = sc.low_modes(n - 2)
    g = sc.gamma(n - 1)
    g[sc.origin] = 0.0
    cols_at = np.argwhere(low & (g != 0))
    d, Q = problem.d, problem.Q
    worst = 1.0 if low.any() else 0.0
    for idx in cols_at:
        p = tuple(int(k) - Q for k in idx)
        gp = g[tuple(idx)]
        block = np.zeros((d, d) + low.shape, dtype=complex)
        for a in range(d):
            e = _unit(lin.shape, Q, a, p)
            block[:, a] = e + gp * lin.dw(e)
        blocks = np.moveaxis(block[:, :, low], -1, 0)
        worst = max(worst, float(np.sum(np.linalg.norm(blocks, ord=2, axis=(1, 2)))))
    return worst


def resonance_diagnostics(problem: StageProblem, st: ScaleState, cfg: SolverConfig) -> ResonanceDiagnostics:
    H = st.hessian
    n = st.n
    sig, cols = sigma00(problem, H, n, cfg)
    h = 1e-3 * problem.scales.eta ** (n + 1)
    sp, _ = sigma00(problem, H, n, cfg, shift=h)
    sm, _ = sigma00(problem, H, n, cfg, shift=-h)
    dsig = (sp - sm) / (2 * h)
    hn = h_norm(problem, H, n, cfg) if cfg.h_norm else None
    return ResonanceDiagnostics(n, sig, dsig, _power_decay(cols, problem.d, problem.Q), hn)


def hessian_floor(pot: Potential, lam: float) -> float:
    """Roundoff level of quantities built from lambda d^2 V: 16 eps lambda sum |q|^2 |v(q)|."""
    n2 = sum(a.astype(float) ** 2 for a in lattice_axes(pot.dim, pot.lattice_bound))
    return ROUNDOFF_FLOOR * abs(lam) * float(np.sum(n2 * np.abs(pot.coeffs)))


def geometric_ratio(values, floor: float = 0.0) -> float:
    """Fitted r in |v_n| ~ C r^n; entries at or below ``floor`` count as exact zeros.

    All zeros gives 0.  A single nonzero entry gives 0 if every later entry
    is zero and inf if it is preceded only by zeros.
    """
    v = np.abs(np.asarray(values, dtype=float))
    n = np.arange(v.size)
    live = v > floor
    if live.sum() >= 2:
        slope = np.polyfit(n[live], np.log(v[live]), 1)[0]
        return float(np.exp(slope))
    if live.sum() == 1 and n[live][0] == v.size - 1 and v.size > 1:
        return float("inf")
    return 0.0


# ---------------------------------------------------------------- stage driver

@dataclass
class StageResult:
    j: int
    y: FourierMap
    report: dict
    states: list


def run_stage(problem: StageProblem, cfg: SolverConfig) -> StageResult:
    """Sweep the scales n = 1, 2, ... until Gamma_<n covers the window."""
    sc = problem.scales
    d, Q = problem.d, problem.Q
    z = FourierMap.zeros(d, Q)
    n_end = sc.n_complete
    rows, states, dz_hist = [], [], []
    rising = 0
    for n in range(1, n_end + 1):
        st = solve_scale(problem, n, z, cfg)
        dz = l1_norm(st.z - z)
        zn = l1_norm(st.z)
        row = {"n": n, "iters": st.iters, "final_residual": st.residual, "z_norm": zn,
               "dz_norm": dz, "contraction": st.contraction_estimate}
        if cfg.diagnostics:
            st.ward_residual_constant = ward_residual_constant(problem, st)
            st.ward_residual_derivative = ward_residual_derivative(problem, st, cfg)
            rd = resonance_diagnostics(problem, st, cfg)
            row.update({
                "ward_const": st.ward_residual_constant,
                "ward_deriv": st.ward_residual_derivative,
                "H_norm": rd.H_norm,
                "sigma00_abs": float(np.linalg.norm(rd.sigma_00, 2)),
                "dsigma00_abs": float(np.linalg.norm(rd.dsigma_00, 2)),
                "rho_decay": rd.rho_offdiag_decay,
            })
        rows.append(row)
        states.append(st)
        significant = dz > cfg.stage_tol * max(zn, 1e-300)
        if dz_hist and significant and dz >= dz_hist[-1]:
            rising += 1
            if rising >= 3:
                raise NonCauchy(f"stage {problem.j}: ||z_n - z_(n-1)|| grew for 3 scales",
                                {"scales": rows})
        else:
            rising = 0
        dz_hist.append(dz)
        z = st.z
        if cfg.early_stop and n > 1 and not significant:
            break
    y = z
    if np.any(y.mean() != 0):
        raise RGError(f"stage {problem.j}: correction has nonzero mean")
    mean_res = float(np.sum(np.abs(states[-1].w_at_z.mean())))
    report = {"j": problem.j, "scales": rows, "y_norm": l1_norm(y), "mean_residual": mean_res,
              "composition_tail": problem.tail}
    return StageResult(problem.j, y, report, states)
