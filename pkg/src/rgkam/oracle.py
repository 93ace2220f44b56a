"""Independent reference solvers for the truncated torus equation.

Nothing here goes through the multiscale machinery or the FFT composition
path: trigonometric sums are done with explicit DFT matrices on an odd grid
and the potential is summed mode by mode.  Only the FourierMap container is
shared with the main solver.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .lattice import FourierMap, Potential


class DivergedOracle(RuntimeError):
    pass


def _divisors(omega, Q):
    r = np.arange(-Q, Q + 1)
    grids = np.meshgrid(*([r] * len(omega)), indexing="ij")
    return sum(w * g for w, g in zip(omega, grids)), grids


class DirectEvaluator:
    """lambda dV(theta + X(theta)) and its linearization by direct summation."""

    def __init__(self, pot: Potential, lam: float, bound: int, grid: int | None = None):
        self.d = pot.dim
        self.lam = float(lam)
        self.bound = int(bound)
        modes = [(np.array(q, dtype=float), v) for q, v in pot.modes()]
        self.qv = np.array([q for q, _ in modes]).reshape(-1, self.d)
        self.vv = np.array([v for _, v in modes], dtype=complex)
        qmax = int(np.max(np.abs(self.qv))) if len(modes) else 0
        Ng = grid or 4 * max(self.bound, qmax, 1) + 1
        if Ng % 2 == 0:
            Ng += 1
        self.Ng = Ng
        th = 2 * np.pi * np.arange(Ng) / Ng
        ks = np.arange(-self.bound, self.bound + 1)
        self.S = np.exp(-1j * np.outer(th, ks))           # samples from coefficients
        self.A = np.conj(self.S).T / Ng                   # coefficients from samples
        mesh = np.meshgrid(*([th] * self.d), indexing="ij")
        self.theta = np.stack([m.ravel() for m in mesh])  # (d, Ng^d)

    def synth(self, c: np.ndarray) -> np.ndarray:
        """(lead, n..n) coefficients -> (lead, Ng..Ng) samples."""
        out = c
        for ax in range(self.d):
            out = np.moveaxis(np.tensordot(out, self.S, axes=([out.ndim - self.d + ax], [1])), -1,
                              out.ndim - self.d + ax)
        return out

    def analyse(self, f: np.ndarray) -> np.ndarray:
        out = f
        for ax in range(self.d):
            out = np.moveaxis(np.tensordot(out, self.A, axes=([out.ndim - self.d + ax], [1])), -1,
                              out.ndim - self.d + ax)
        return out

    def _points(self, x: np.ndarray, real: bool):
        X = self.synth(x).reshape(self.d, -1)
        if real:
            X = X.real
        return self.theta + X

    def gradient_samples(self, pts):
        g = np.zeros(pts.shape, dtype=complex)
        for q, v in zip(self.qv, self.vv):
            e = v * np.exp(-1j * (q @ pts))
            for a in range(self.d):
                if q[a]:
                    g[a] += -1j * q[a] * e
        return self.lam * g

    def hessian_samples(self, pts):
        h = np.zeros((self.d, self.d, pts.shape[1]), dtype=complex)
        for q, v in zip(self.qv, self.vv):
            e = v * np.exp(-1j * (q @ pts))
            for a in range(self.d):
                for b in range(self.d):
                    if q[a] and q[b]:
                        h[a, b] += -q[a] * q[b] * e
        return self.lam * h

    def W(self, x: np.ndarray, real: bool = True) -> np.ndarray:
        pts = self._points(x, real)
        g = self.gradient_samples(pts)
        if real:
            g = g.real
        return self.analyse(g.reshape((self.d,) + (self.Ng,) * self.d))

    def hessian(self, x: np.ndarray, real: bool = True) -> np.ndarray:
        h = self.hessian_samples(self._points(x, real))
        return h.real if real else h

    def jvp(self, Hs: np.ndarray, delta: np.ndarray) -> np.ndarray:
        ds = self.synth(delta).reshape(self.d, -1)
        prod = np.einsum("abm,bm->am", Hs, ds)
        return self.analyse(prod.reshape((self.d,) + (self.Ng,) * self.d))


def _l1(c):
    return float(np.sum(np.sqrt(np.sum(np.abs(c) ** 2, axis=0))))


def direct_residual(x: FourierMap, pot: Potential, lam: float, omega, grid: int | None = None) -> float:
    """l1 norm of D^2 X + lambda dV(theta + X) on the window of X."""
    ev = DirectEvaluator(pot, lam, x.lattice_bound, grid)
    k, _ = _divisors(np.asarray(omega, float), x.lattice_bound)
    return _l1(-(k**2) * x.coeffs + ev.W(x.coeffs, x.real))


@dataclass
class OracleSolution:
    X: FourierMap
    residual: float
    newton_iters: int
    lindstedt_orders: list = field(default_factory=list)


def _inverse_divisors(omega, Q):
    k, _ = _divisors(np.asarray(omega, float), Q)
    d = len(omega)
    origin = (Q,) * d
    kk = k.copy()
    kk[origin] = 1.0
    if np.any(np.abs(kk) < 1e-13):
        raise DivergedOracle("exact resonance inside the oracle window")
    g = 1.0 / kk**2
    g[origin] = 0.0
    return g, k


def newton_solve(pot: Potential, omega, lam: float, bound: int, x_init: FourierMap | None = None,
                 tol: float = 1e-13, max_iter: int = 50) -> OracleSolution:
    """Newton-GMRES on x = G0 P W(x) over the full window, no cutoffs."""
    d = pot.dim
    if pot.max_mode > bound:
        raise ValueError("potential modes exceed the oracle window")
    ev = DirectEvaluator(pot, lam, bound)
    g0, k = _inverse_divisors(omega, bound)
    shape = (d,) + g0.shape
    x = np.zeros(shape, dtype=complex) if x_init is None else x_init.resized(bound).coeffs.copy()

    def F(x):
        return x - g0 * ev.W(x)

    def herm(c):
        flip = c[(slice(None),) + (slice(None, None, -1),) * d]
        return 0.5 * (c + np.conj(flip))

    R = F(x)
    r = _l1(R)
    r0 = max(r, 1e-300)
    it = 0
    damped = False
    while r > tol * max(_l1(x), 1e-300) and r > 0:
        if it >= max_iter:
            raise DivergedOracle(f"no convergence after {max_iter} iterations (residual {r:.2e})")
        Hs = ev.hessian(x)
        op = LinearOperator((x.size, x.size), dtype=complex,
                            matvec=lambda v: v - (g0 * ev.jvp(Hs, v.reshape(shape))).ravel())
        step, info = gmres(op, -R.ravel(), rtol=1e-13, atol=0.0, restart=80, maxiter=50)
        step = step.reshape(shape)
        t = 1.0
        while True:
            xn = herm(x + t * step)
            Rn = F(xn)
            rn = _l1(Rn)
            if np.isfinite(rn) and (rn < r or not damped):
                break
            t *= 0.5
            if t < 2**-10:
                raise DivergedOracle(f"damped Newton stalled at residual {r:.2e}")
        if not np.isfinite(rn) or rn > 1e3 * r0:
            raise DivergedOracle(f"Newton diverged (residual {rn:.2e})")
        if rn >= r:
            damped = True
        x, R, r = xn, Rn, rn
        it += 1
    X = FourierMap(x, True)
    res = _l1(-(k**2) * x + ev.W(x))
    return OracleSolution(X, res, it)


def lindstedt(pot: Potential, omega, K: int, bound: int | None = None) -> list[FourierMap]:
    """Coefficients X_1..X_K of X = sum_k lambda^k X_k.

    Each dV(theta + S), S = sum lambda^i X_i, is expanded mode by mode via
    exp(-i q.S) = sum_k lambda^k E_k with k E_k = sum_i i a_i E_(k-i),
    a_i = -i q.X_i, all on grid samples.  The grid is large enough for the
    products to be exact on the window.
    """
    if K < 1:
        raise ValueError("K >= 1")
    d = pot.dim
    qv = max(pot.max_mode, 1)
    B = max(bound or 0, K * qv)
    ev = DirectEvaluator(pot, 1.0, B, grid=2 * B + 1)
    g0, _ = _inverse_divisors(omega, B)
    shape = (d,) + (ev.Ng,) * d
    Xs = []        # samples of X_i, (d, M)
    E = {}         # per potential mode: list of E_k samples
    modes = list(zip(ev.qv, ev.vv))
    for qi, _ in enumerate(modes):
        E[qi] = [np.ones(ev.theta.shape[1], dtype=complex)]
    base = [np.exp(-1j * (q @ ev.theta)) for q, _ in modes]
    out = []
    for k in range(1, K + 1):
        # coefficient of lambda^(k-1) in dV(theta + S)
        f = np.zeros((d, ev.theta.shape[1]), dtype=complex)
        for qi, (q, v) in enumerate(modes):
            Ek = E[qi][k - 1]
            for a in range(d):
                if q[a]:
                    f[a] += -1j * q[a] * v * base[qi] * Ek
        coeff = ev.analyse(f.reshape(shape))
        xk = g0 * coeff
        Xk = FourierMap(xk, True).symmetrized()
        out.append(Xk)
        Xs.append(ev.synth(Xk.coeffs).reshape(d, -1).real)
        for qi, (q, _) in enumerate(modes):
            a = [-1j * (q @ X) for X in Xs]
            acc = sum((i + 1) * a[i] * E[qi][k - 1 - i] for i in range(k))
            E[qi].append(acc / k)
    if bound is not None and bound < B:
        out = [X.resized(bound) for X in out]
    return out


def lindstedt_sum(orders: list[FourierMap], lam: float, K: int | None = None) -> FourierMap:
    K = len(orders) if K is None else K
    total = orders[0] * lam
    for k in range(2, K + 1):
        total = total + orders[k - 1] * lam**k
    return total


def compare(a: FourierMap, b: FourierMap, lam: float) -> dict:
    Q = max(a.lattice_bound, b.lattice_bound)
    diff = a.resized(Q).coeffs - b.resized(Q).coeffs
    mags = np.sqrt(np.sum(np.abs(diff) ** 2, axis=0))
    return {"l1_distance": float(mags.sum()), "per_mode_max": float(mags.max()), "lambda": float(lam),
            "bound": int(Q)}


def ward_check(x: FourierMap, pot: Potential, lam: float, omega, probes) -> tuple[float, float]:
    """Ward residuals of a fully converged solution, by the direct evaluator.

    For the complete problem the cutoff is G0 itself and there is no
    background, so the identities read: mean W(X) = 0 and, for each probe p,
    [(1 - pi0 G0)^-1 pi0 e_(a,p)](0) = i p w^a(X; -p).
    """
    d, Q = x.dim, x.lattice_bound
    ev = DirectEvaluator(pot, lam, Q)
    g0, _ = _inverse_divisors(omega, Q)
    w = ev.W(x.coeffs, x.real)
    origin = (slice(None),) + (Q,) * d
    const = float(np.sum(np.abs(w[origin])))
    Hs = ev.hessian(x.coeffs, x.real)
    shape = (d,) + g0.shape
    op = LinearOperator((x.coeffs.size,) * 2, dtype=complex,
                        matvec=lambda v: v - (g0 * ev.jvp(Hs, v.reshape(shape))).ravel())
    worst = 0.0
    for p in probes:
        wm = w[(slice(None),) + tuple(Q - k for k in p)]
        for a in range(d):
            e = np.zeros(shape, dtype=complex)
            e[(a,) + tuple(Q + k for k in p)] = 1.0
            pe = ev.jvp(Hs, e)
            if np.any(pe):
                s, _ = gmres(op, (g0 * pe).ravel(), rtol=1e-13, atol=0.0, restart=80, maxiter=50)
                u = ev.jvp(Hs, e + s.reshape(shape))
            else:
                u = pe
            lhs = u[origin]
            rhs = 1j * np.asarray(p, float) * wm[a]
            worst = max(worst, float(np.sum(np.abs(lhs - rhs))))
    return const, worst
