"""Outer loop: accumulate x_j = x_{j-1} + y_j over the ladder and report on the result."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import zeta

from .frequency import certify
from .ladder import ApproximationLadder
from .lattice import (Composer, FourierMap, Potential, apply_D2, l1_index, l1_norm, lattice_axes,
                      shift, small_divisors, sup_norm_index)
from .rg import RGError, SolverConfig, StageProblem, run_stage
from .scales import LatticeScales

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- residuals and embeddings

def residual_with_tail(X: FourierMap, pot: Potential, lam: float, omega) -> tuple[float, float]:
    comp = Composer(pot, lam, X.lattice_bound)
    c = comp(X)
    return l1_norm(apply_D2(X, omega) + c.w), c.tail


def residual(X: FourierMap, pot: Potential, lam: float, omega) -> float:
    """l1 norm of D^2 X + lambda dV(theta + X) on the window."""
    return residual_with_tail(X, pot, lam, omega)[0]


def action_embedding(X: FourierMap, omega) -> FourierMap:
    """Y = omega + D X, with D = omega.d_theta."""
    k = small_divisors(omega, X.lattice_bound)
    c = -1j * k * X.coeffs
    c[(slice(None),) + (X.lattice_bound,) * X.dim] += np.asarray(omega, dtype=float)
    return X.with_coeffs(c)


# ---------------------------------------------------------------- regularity

@dataclass
class CsNorm:
    s: float
    value: float
    windowed: float
    tail: float
    extrapolated: bool
    exponent: float | None


def _shell_sums(X: FourierMap) -> np.ndarray:
    n1 = l1_index(X.dim, X.lattice_bound)
    mags = np.sqrt(np.sum(np.abs(X.coeffs) ** 2, axis=0))
    return np.bincount(n1.ravel(), weights=mags.ravel())


def cs_norm(X: FourierMap, s: float, noise: float = 1e-15) -> CsNorm:
    """sum_q |q|_1^s |x(q)|, with a power-law tail beyond the complete shells.

    Shells |q|_1 = m are complete for m <= Q.  If every complete shell is
    above ``noise`` times the largest one, log S(m) is fitted against
    log m on [m*/2, m*] and the incomplete shells plus the infinite tail are
    replaced by the fit (a Hurwitz zeta sum).  Otherwise the series is taken
    to have ended inside the window.
    """
    if s < 0:
        raise ValueError("s must be nonnegative")
    S = _shell_sums(X)
    m = np.arange(S.size, dtype=float)
    w = np.where(m > 0, m, 0.0) ** s
    w[0] = 1.0 if s == 0 else 0.0
    windowed = float(np.sum(w * S))
    Q = X.lattice_bound
    top = S.max() if S.size else 0.0
    live = np.nonzero(S[1:Q + 1] > noise * top)[0] + 1 if top > 0 else np.array([], int)
    # a truncated decaying series occupies every shell up to the edge; sparse maps end in the window
    if live.size < 4 or live[-1] < 0.75 * Q or live.size != live[-1]:
        return CsNorm(s, windowed, windowed, 0.0, False, None)
    mstar = live[-1]
    sel = live[live >= mstar / 2]
    slope, icpt = np.polyfit(np.log(sel), np.log(S[sel]), 1)
    p = -slope
    if p <= 0:
        return CsNorm(s, windowed, windowed, 0.0, False, None)
    inside = float(np.sum(w[: Q + 1] * S[: Q + 1]))
    if p - s <= 1:
        return CsNorm(s, np.inf, windowed, np.inf, True, float(p))
    tail = float(np.exp(icpt) * zeta(p - s, Q + 1))
    return CsNorm(s, inside + tail, windowed, tail, True, float(p))


def cs_window_change(X: FourierMap, s: float) -> float:
    """Relative change of the windowed C^s sum between half and full window."""
    full = cs_norm(X, s).windowed
    half = cs_norm(X.resized(max(X.lattice_bound // 2, 1)), s).windowed
    if full == 0:
        return 0.0
    return abs(full - half) / full


def max_stable_s(X: FourierMap, s_grid=None, tol: float = 0.05) -> float | None:
    """Largest s on the grid whose windowed sum changes by < tol under window doubling."""
    s_grid = np.arange(0.0, 16.01, 0.5) if s_grid is None else s_grid
    best = None
    for s in s_grid:
        if np.isfinite(cs_norm(X, s).value) and cs_window_change(X, s) < tol:
            best = float(s)
    return best


def decay_check(x: FourierMap, gamma_j: float, ell: float, floor: float = 1e-15) -> dict:
    """Fit log|x(q)| + (ell/3) log|q| = log C - a |q| and compare a with 1/(4 gamma_j)."""
    n1 = l1_index(x.dim, x.lattice_bound).astype(float)
    mags = np.sqrt(np.sum(np.abs(x.coeffs) ** 2, axis=0))
    top = mags.max()
    out = {"predicted_rate": 1.0 / (4.0 * gamma_j), "rate": None, "envelope_C": 0.0,
           "fitted_C": 0.0, "worst_q": None, "worst_ratio": 0.0, "points": 0}
    if top == 0:
        return out
    ok = (n1 > 0) & (mags > floor * top)
    y = np.log(mags[ok]) + (ell / 3.0) * np.log(n1[ok])
    out["points"] = int(ok.sum())
    out["envelope_C"] = float(np.exp(np.max(y + n1[ok] * out["predicted_rate"])))
    if len(np.unique(n1[ok])) < 2:
        a, logC = 0.0, float(np.max(y))
    else:
        slope, logC = np.polyfit(n1[ok], y, 1)
        a = -slope
    out["rate"] = float(a)
    out["fitted_C"] = float(np.exp(logC))
    ratio = np.exp(y - (logC - a * n1[ok]))
    i = int(np.argmax(ratio))
    idx = np.argwhere(ok)[i]
    out["worst_q"] = [int(k) - x.lattice_bound for k in idx]
    out["worst_ratio"] = float(ratio[i])
    return out


# ---------------------------------------------------------------- trajectories

def trajectory(X: FourierMap, omega, theta0, t_grid) -> np.ndarray:
    """Rows (t, theta_1..theta_d, I_1..I_d) with theta = psi + X(psi), I = Y(psi), psi = theta0 + omega t."""
    omega = np.asarray(omega, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    Xs = shift(X, -theta0)  # Xs(phi) = X(phi + theta0)
    Y = action_embedding(Xs, omega)
    d, Q = X.dim, X.lattice_bound
    qs = np.stack([a.ravel() for a in lattice_axes(d, Q)], axis=1)
    phase = np.exp(-1j * np.outer(t, qs @ omega))
    xv = (phase @ Xs.coeffs.reshape(d, -1).T).real
    yv = (phase @ Y.coeffs.reshape(d, -1).T).real
    theta = theta0[None, :] + np.outer(t, omega) + xv
    return np.column_stack([t, theta, yv])


# ---------------------------------------------------------------- driver

@dataclass
class SolveReport:
    stages: list = field(default_factory=list)
    corrections: list = field(default_factory=list)
    X: FourierMap | None = None
    Y_act: FourierMap | None = None
    cs_norms: list = field(default_factory=list)
    status: str = "ok"
    residual: float | None = None
    residual_tail: float | None = None
    certificate: dict | None = None
    max_stable_s: float | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def _remaining_tail(pot: Potential, gamma: int, lam: float) -> float:
    n1 = l1_index(pot.dim, pot.lattice_bound)
    out = sup_norm_index(pot.dim, pot.lattice_bound) > gamma
    return abs(lam) * float(np.sum(n1[out] * np.abs(pot.coeffs[out])))


def solve(pot: Potential, omega, lam: float, ell: float, *, lattice_bound: int, eta: float = 0.5,
          M: int = 8, jmax: int | None = None, nu: float = 1.2, global_tol: float = 1e-10,
          solver: SolverConfig | None = None, cs_grid=(0, 1, 2, 3, 4)) -> SolveReport:
    solver = solver or SolverConfig()
    omega = np.asarray(omega, dtype=float)
    d, Q = pot.dim, int(lattice_bound)
    if pot.max_mode > Q:
        raise ValueError(f"lattice bound {Q} smaller than the largest potential mode {pot.max_mode}")
    cert = certify(omega, nu, d * Q)
    rep = SolveReport(certificate=cert.to_json())
    pot = pot.resized(max(pot.lattice_bound, Q)) if pot.lattice_bound < Q else pot
    ladder = ApproximationLadder(pot, M=M, jmax=jmax)
    scales = LatticeScales(omega, Q, eta)
    x = FourierMap.zeros(d, Q)
    last = ladder.last_stage()
    for j in range(0, last + 1):
        Vj, Vp = ladder.V(j), ladder.V(j - 1)
        try:
            problem = StageProblem(j, x, Vj, Vp, lam, scales, oversample=solver.oversample)
            res = run_stage(problem, solver)
        except RGError as e:
            rep.status = f"failed at stage {j}: {type(e).__name__}: {e}"
            rep.stages.append({"j": j, "error": str(e), "kind": type(e).__name__})
            break
        x = x + res.y
        g = ladder.gamma(j)
        entry = dict(res.report)
        entry.update({
            "gamma_j": g,
            "x_norm": l1_norm(x),
            "stage_residual": residual(x, Vj, lam, omega),
            "decay_fit": decay_check(x, g, ell),
        })
        rep.stages.append(entry)
        rep.corrections.append(res.y)
        log.info("stage %d: |y| = %.3e", j, entry["y_norm"])
        if jmax is None and entry["y_norm"] <= global_tol and _remaining_tail(pot, g, lam) <= global_tol:
            break
    rep.X = x
    rep.Y_act = action_embedding(x, omega)
    rep.residual, rep.residual_tail = residual_with_tail(x, pot, lam, omega)
    for s in cs_grid:
        c = cs_norm(x, s)
        rep.cs_norms.append({"s": float(s), "value": c.value, "windowed": c.windowed, "tail": c.tail,
                             "extrapolated": c.extrapolated, "window_change": cs_window_change(x, s)})
    rep.max_stable_s = max_stable_s(x)
    return rep
