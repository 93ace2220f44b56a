"""Fourier series on the integer lattice Z^d.

Maps are stored densely on the cube |q|_inf <= Q.  Array index k along a
lattice axis corresponds to q = k - Q.  The basis convention is

    X(theta) = sum_q exp(-i q.theta) x(q),

so derivatives multiply by -i q and a real map satisfies x(-q) = conj x(q).
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Iterator

import numpy as np


class AliasingError(ValueError):
    """Sampling grid too coarse for the requested lattice window."""


class ResonantFrequencyError(ValueError):
    """A nonzero lattice mode has vanishing small divisor omega.q."""

    def __init__(self, q, message=None):
        self.q = tuple(int(c) for c in q)
        super().__init__(message or f"resonant mode q={self.q}")


class TruncationWarning(UserWarning):
    pass


def lattice_axes(d: int, Q: int) -> list[np.ndarray]:
    """Integer coordinate arrays q_1..q_d on the cube, each of shape (2Q+1,)*d."""
    r = np.arange(-Q, Q + 1)
    return list(np.meshgrid(*([r] * d), indexing="ij"))


def sup_norm_index(d: int, Q: int) -> np.ndarray:
    return np.max(np.abs(np.stack(lattice_axes(d, Q))), axis=0)


def l1_index(d: int, Q: int) -> np.ndarray:
    return np.sum(np.abs(np.stack(lattice_axes(d, Q))), axis=0)


def small_divisors(omega, Q: int) -> np.ndarray:
    """omega.q on the cube."""
    omega = np.asarray(omega, dtype=float)
    axes = lattice_axes(len(omega), Q)
    return sum(w * q for w, q in zip(omega, axes))


def _flip(a: np.ndarray, d: int) -> np.ndarray:
    """a(q) -> a(-q) over the trailing d lattice axes."""
    return a[(Ellipsis,) + (slice(None, None, -1),) * d]


def _resize(a: np.ndarray, d: int, Q_old: int, Q_new: int) -> np.ndarray:
    if Q_new == Q_old:
        return a.copy()
    lead = a.shape[: a.ndim - d]
    if Q_new < Q_old:
        s = slice(Q_old - Q_new, Q_old + Q_new + 1)
        return a[(Ellipsis,) + (s,) * d].copy()
    out = np.zeros(lead + (2 * Q_new + 1,) * d, dtype=a.dtype)
    s = slice(Q_new - Q_old, Q_new + Q_old + 1)
    out[(Ellipsis,) + (s,) * d] = a
    return out


@dataclass(frozen=True, eq=False)
class FourierMap:
    """C^d-valued Fourier series with coefficients on |q|_inf <= Q.

    ``coeffs`` has shape (d, 2Q+1, ..., 2Q+1).  ``real`` flags maps that are
    real valued on the real torus (Hermitian coefficients).
    """

    coeffs: np.ndarray
    real: bool = True

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim < 2 or c.shape[0] != c.ndim - 1:
            raise ValueError(f"coefficient array of shape {c.shape} is not (d, n, ..., n)")
        n = c.shape[1]
        if n % 2 != 1 or any(s != n for s in c.shape[1:]):
            raise ValueError("lattice axes must share one odd length 2Q+1")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @property
    def dim(self) -> int:
        return self.coeffs.shape[0]

    @property
    def lattice_bound(self) -> int:
        return (self.coeffs.shape[1] - 1) // 2

    @classmethod
    def zeros(cls, d: int, Q: int, real: bool = True) -> "FourierMap":
        return cls(np.zeros((d,) + (2 * Q + 1,) * d, dtype=complex), real)

    @classmethod
    def from_modes(cls, d: int, Q: int, modes: dict, real: bool = True) -> "FourierMap":
        c = np.zeros((d,) + (2 * Q + 1,) * d, dtype=complex)
        for q, v in modes.items():
            if max(abs(k) for k in q) > Q:
                raise ValueError(f"mode {q} outside window {Q}")
            c[(slice(None),) + tuple(k + Q for k in q)] = v
        return cls(c, real)

    def __getitem__(self, q) -> np.ndarray:
        Q = self.lattice_bound
        if max(abs(k) for k in q) > Q:
            return np.zeros(self.dim, dtype=complex)
        return self.coeffs[(slice(None),) + tuple(k + Q for k in q)].copy()

    def modes(self) -> Iterator[tuple[tuple[int, ...], np.ndarray]]:
        Q = self.lattice_bound
        nz = np.argwhere(np.any(self.coeffs != 0, axis=0))
        for idx in nz:
            yield tuple(int(k) - Q for k in idx), self.coeffs[(slice(None),) + tuple(idx)].copy()

    def with_coeffs(self, c, real=None) -> "FourierMap":
        return FourierMap(c, self.real if real is None else real)

    def resized(self, Q: int) -> "FourierMap":
        return self.with_coeffs(_resize(self.coeffs, self.dim, self.lattice_bound, Q))

    def _binary(self, other, op):
        if not isinstance(other, FourierMap):
            return NotImplemented
        Q = max(self.lattice_bound, other.lattice_bound)
        a, b = self.resized(Q).coeffs, other.resized(Q).coeffs
        return FourierMap(op(a, b), self.real and other.real)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __neg__(self):
        return self.with_coeffs(-self.coeffs)

    def __mul__(self, s):
        s = complex(s)
        return FourierMap(self.coeffs * s, self.real and s.imag == 0)

    __rmul__ = __mul__

    def mean(self) -> np.ndarray:
        return self[(0,) * self.dim]

    def hermitian_defect(self) -> float:
        c = self.coeffs
        return float(np.max(np.abs(_flip(c, self.dim) - np.conj(c)), initial=0.0))

    def symmetrized(self) -> "FourierMap":
        c = self.coeffs
        return FourierMap(0.5 * (c + np.conj(_flip(c, self.dim))), True)


@dataclass(frozen=True, eq=False)
class Potential:
    """Scalar trigonometric polynomial V(theta) = sum_q exp(-i q.theta) v(q).

    ``ell`` is the regularity class the potential is declared to have; it
    only enters diagnostics.
    """

    coeffs: np.ndarray
    ell: int = 0

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        n = c.shape[0]
        if n % 2 != 1 or any(s != n for s in c.shape):
            raise ValueError("potential coefficients must live on a cube (2Q+1,)*d")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @property
    def dim(self) -> int:
        return self.coeffs.ndim

    @property
    def lattice_bound(self) -> int:
        return (self.coeffs.shape[0] - 1) // 2

    @property
    def max_mode(self) -> int:
        """Largest |q|_inf carrying a nonzero coefficient (0 if none)."""
        nz = self.coeffs != 0
        if not nz.any():
            return 0
        return int(sup_norm_index(self.dim, self.lattice_bound)[nz].max())

    @classmethod
    def from_modes(cls, d: int, modes: dict, ell: int = 0, Q: int | None = None) -> "Potential":
        if Q is None:
            Q = max((max(abs(k) for k in q) for q in modes), default=0)
        c = np.zeros((2 * Q + 1,) * d, dtype=complex)
        for q, v in modes.items():
            c[tuple(k + Q for k in q)] = v
        return cls(c, ell)

    def __getitem__(self, q) -> complex:
        Q = self.lattice_bound
        if max(abs(k) for k in q) > Q:
            return 0j
        return complex(self.coeffs[tuple(k + Q for k in q)])

    def modes(self):
        Q = self.lattice_bound
        for idx in np.argwhere(self.coeffs != 0):
            yield tuple(int(k) - Q for k in idx), complex(self.coeffs[tuple(idx)])

    def trimmed(self) -> "Potential":
        return Potential(_resize(self.coeffs, self.dim, self.lattice_bound, self.max_mode), self.ell)

    def resized(self, Q: int) -> "Potential":
        return Potential(_resize(self.coeffs, self.dim, self.lattice_bound, Q), self.ell)

    def gradient_coeffs(self) -> np.ndarray:
        """Coefficients of dV, shape (d, n, ..., n): -i q_a v(q)."""
        axes = lattice_axes(self.dim, self.lattice_bound)
        return np.stack([-1j * q * self.coeffs for q in axes])

    def hessian_coeffs(self) -> np.ndarray:
        """Coefficients of d^2 V, shape (d, d, n, ..., n): -q_a q_b v(q)."""
        axes = lattice_axes(self.dim, self.lattice_bound)
        return np.stack([np.stack([-qa * qb * self.coeffs for qb in axes]) for qa in axes])

    def hermitian_defect(self) -> float:
        c = self.coeffs
        return float(np.max(np.abs(_flip(c, self.dim) - np.conj(c)), initial=0.0))


# ---------------------------------------------------------------- norms

def l1_norm(m: FourierMap) -> float:
    """sum_q |x(q)| with the Euclidean norm on C^d."""
    return float(np.sum(np.sqrt(np.sum(np.abs(m.coeffs) ** 2, axis=0))))


def weighted_norm(m: FourierMap, sigma: float) -> float:
    """sum_q exp(sigma |q|_1) |x(q)|."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    w = sigma * l1_index(m.dim, m.lattice_bound)
    mags = np.sqrt(np.sum(np.abs(m.coeffs) ** 2, axis=0))
    with np.errstate(over="ignore"):
        weights = np.exp(w)
    if not np.all(np.isfinite(weights[mags > 0])):
        raise OverflowError(f"weight exp({w.max():.1f}) overflows")
    out = float(np.sum(weights * mags))
    if not np.isfinite(out):
        raise OverflowError("weighted norm overflows")
    return out


def evaluate(m: FourierMap, theta) -> np.ndarray:
    """Evaluate the series at a (possibly complex) point theta in C^d."""
    theta = np.asarray(theta, dtype=complex)
    axes = lattice_axes(m.dim, m.lattice_bound)
    phase = np.exp(-1j * sum(t * q for t, q in zip(theta, axes)))
    return np.array([np.sum(c * phase) for c in m.coeffs])


def shift(m: FourierMap, beta) -> FourierMap:
    """Coefficients of theta -> X(theta - beta): x(q) exp(i q.beta)."""
    beta = np.asarray(beta, dtype=complex)
    axes = lattice_axes(m.dim, m.lattice_bound)
    phase = np.exp(1j * sum(b * q for b, q in zip(beta, axes)))
    return FourierMap(m.coeffs * phase, m.real and not np.any(beta.imag))


def truncate(m: FourierMap, bound: int) -> FourierMap:
    """Zero every mode with |q|_inf > bound, keeping the storage window."""
    mask = sup_norm_index(m.dim, m.lattice_bound) <= bound
    return m.with_coeffs(m.coeffs * mask)


# ---------------------------------------------------------------- operators

def apply_D2(m: FourierMap, omega) -> FourierMap:
    """(omega.d_theta)^2 multiplies x(q) by -(omega.q)^2."""
    k = small_divisors(omega, m.lattice_bound)
    return m.with_coeffs(-(k**2) * m.coeffs)


def projector_P(m: FourierMap) -> FourierMap:
    c = m.coeffs.copy()
    c[(slice(None),) + (m.lattice_bound,) * m.dim] = 0
    return m.with_coeffs(c)


def _resonance_guard(k: np.ndarray, omega, Q: int):
    d = len(omega)
    scale = 64 * np.finfo(float).eps * np.max(np.abs(omega)) * np.maximum(l1_index(d, Q), 1)
    bad = np.abs(k) <= scale
    bad[(Q,) * d] = False
    if bad.any():
        idx = np.argwhere(bad)[0]
        raise ResonantFrequencyError(idx - Q)


def apply_G0(m: FourierMap, omega) -> FourierMap:
    """Inverse of -D^2 on nonzero modes: x(q) / (omega.q)^2, zero at q=0."""
    Q = m.lattice_bound
    k = small_divisors(omega, Q)
    _resonance_guard(k, omega, Q)
    inv = np.zeros_like(k)
    nz = np.ones(k.shape, dtype=bool)
    nz[(Q,) * m.dim] = False
    inv[nz] = 1.0 / k[nz] ** 2
    return m.with_coeffs(inv * m.coeffs)


# ---------------------------------------------------------------- grids

def _grid_index(d: int, Q: int, N: int):
    idx = np.arange(-Q, Q + 1) % N
    return np.ix_(*([idx] * d))


def grid_transform(m: FourierMap, N: int) -> np.ndarray:
    """Samples X(2 pi k / N) on the uniform N^d grid, shape (d, N, ..., N)."""
    Q, d = m.lattice_bound, m.dim
    if N < 2 * Q + 2:
        raise AliasingError(f"grid N={N} too coarse for window Q={Q}")
    a = np.zeros((d,) + (N,) * d, dtype=complex)
    ix = _grid_index(d, Q, N)
    for c in range(d):
        a[c][ix] = m.coeffs[c]
    return np.fft.fftn(a, axes=tuple(range(1, d + 1)))


def grid_spectrum(samples: np.ndarray, Q: int, d: int | None = None) -> tuple[np.ndarray, float]:
    """Window coefficients of sampled fields and the l1 mass left outside.

    ``samples`` has shape lead + (N,)*d; the returned array has shape
    lead + (2Q+1,)*d.  The tail is the l1 mass of grid modes with
    |q|_inf > Q.
    """
    if d is None:
        d = samples.shape[0]
    N = samples.shape[-1]
    if N < 2 * Q + 1:
        raise AliasingError(f"grid N={N} too coarse for window Q={Q}")
    axes = tuple(range(samples.ndim - d, samples.ndim))
    spectrum = np.fft.ifftn(samples, axes=axes)
    ix = _grid_index(d, Q, N)
    lead = samples.shape[: samples.ndim - d]
    flat = spectrum.reshape((-1,) + (N,) * d)
    win = np.stack([f[ix] for f in flat]).reshape(lead + (2 * Q + 1,) * d)
    mags = np.sqrt(np.sum(np.abs(flat) ** 2, axis=0))
    tail = float(np.sum(mags) - np.sum(mags[ix]))
    return win, max(tail, 0.0)


def inverse_grid_transform(samples: np.ndarray, Q: int, real: bool = True) -> FourierMap:
    win, _ = grid_spectrum(samples, Q, samples.shape[0])
    return FourierMap(win, real)


def default_grid(*bounds: int, oversample: int = 4) -> int:
    """Even grid size, at least ``oversample`` times the joint bandwidth."""
    b = max(max(bounds), 1)
    N = oversample * b
    return N + (N % 2)


# ---------------------------------------------------------------- composition

def eval_trig(coeff_stack: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Direct evaluation of several trigonometric polynomials at points.

    coeff_stack: (K, n, ..., n) with n = 2Q+1.  points: (d, M), real or
    complex.  Returns (K, M) with entries sum_q c_k(q) exp(-i q.p_m).
    The d-fold sum is contracted one lattice axis at a time.
    """
    K = coeff_stack.shape[0]
    d, M = points.shape
    n = coeff_stack.shape[1]
    Q = (n - 1) // 2
    qs = np.arange(-Q, Q + 1)
    E = [np.exp(-1j * np.outer(qs, points[a])) for a in range(d)]
    A = coeff_stack.reshape(K * n ** (d - 1), n) @ E[d - 1]
    for a in range(d - 2, -1, -1):
        A = A.reshape(K * n**a, n, M)
        A = np.einsum("inm,nm->im", A, E[a])
    return A.reshape(K, M)


@dataclass
class Composition:
    """Result of composing lambda dV with theta + X(theta) on a grid."""

    w: FourierMap
    tail: float
    hessian: np.ndarray | None  # (d, d, N, ..., N) samples of lambda d^2V
    grid: int


class Composer:
    """Pseudo-spectral evaluation of W(X) = lambda dV(theta + X(theta)).

    X is sampled on an N^d grid by FFT, the derivatives of V are summed
    directly at the displaced points and the result is transformed back and
    truncated to the window |q|_inf <= Q.
    """

    def __init__(self, pot: Potential, lam: float, bound: int, grid: int | None = None,
                 oversample: int = 4, tail_tol: float = np.inf):
        self.pot = pot.trimmed()
        self.lam = float(lam)
        self.bound = int(bound)
        self.d = pot.dim
        self.N = grid or default_grid(self.bound, self.pot.lattice_bound, oversample=oversample)
        if self.N < 2 * self.bound + 2:
            raise AliasingError(f"grid N={self.N} too coarse for window Q={self.bound}")
        self.tail_tol = tail_tol
        self._grad = self.pot.gradient_coeffs()
        hc = self.pot.hessian_coeffs()
        self._pairs = [(a, b) for a in range(self.d) for b in range(a, self.d)]
        self._hess = np.stack([hc[a, b] for a, b in self._pairs]) if self._pairs else None
        t = 2 * np.pi * np.arange(self.N) / self.N
        self._theta = np.stack([g.ravel() for g in np.meshgrid(*([t] * self.d), indexing="ij")])

    def exact_gradient(self) -> FourierMap:
        """lambda dV on the window, with no grid involved."""
        g = self.lam * self._grad
        return FourierMap(_resize(g, self.d, self.pot.lattice_bound, self.bound), True)

    def __call__(self, X: FourierMap, hessian: bool = False) -> Composition:
        d, N = self.d, self.N
        if not np.any(X.coeffs) and not hessian:
            return Composition(self.exact_gradient(), 0.0, None, N)
        Xs = grid_transform(X.resized(min(X.lattice_bound, N // 2 - 1)), N).reshape(d, -1)
        if X.real:
            Xs = Xs.real
        pts = self._theta + Xs
        stack = self._grad if not hessian else np.concatenate([self._grad, self._hess])
        vals = self.lam * eval_trig(stack, pts)
        if X.real:
            vals = vals.real
        gs = vals[:d].reshape((d,) + (N,) * d)
        win, tail = grid_spectrum(gs, self.bound, d)
        if tail > self.tail_tol:
            warnings.warn(f"composition tail {tail:.3e} above {self.tail_tol:.1e}", TruncationWarning)
        H = None
        if hessian:
            H = np.empty((d, d) + (N,) * d, dtype=vals.dtype)
            for k, (a, b) in enumerate(self._pairs):
                H[a, b] = H[b, a] = vals[d + k].reshape((N,) * d)
        return Composition(FourierMap(win, X.real), tail, H, N)

    def hessian_action(self, H: np.ndarray, delta: np.ndarray) -> np.ndarray:
        """Window coefficients of H(theta) delta(theta) for a coefficient cube delta."""
        d, N = self.d, self.N
        ds = grid_transform(FourierMap(delta, False), N)
        prod = np.einsum("ab...,b...->a...", H, ds)
        win, _ = grid_spectrum(prod, self.bound, d)
        return win


def compose_w0(pot: Potential, X: FourierMap, lam: float, grid: int | None = None,
               tail_tol: float = 1e-12) -> FourierMap:
    """lambda dV(theta + X(theta)) truncated to the window of X."""
    comp = Composer(pot, lam, X.lattice_bound, grid=grid, tail_tol=tail_tol)
    return comp(X).w


# ---------------------------------------------------------------- json

def map_to_json(m: FourierMap) -> dict:
    modes = []
    for q, v in m.modes():
        modes.append({"q": list(q), "re": [float(x) for x in v.real], "im": [float(x) for x in v.imag]})
    return {"dim": m.dim, "lattice_bound": m.lattice_bound, "real_flag": bool(m.real), "modes": modes}


def map_from_json(obj: dict) -> FourierMap:
    d, Q = int(obj["dim"]), int(obj["lattice_bound"])
    modes = {tuple(e["q"]): np.asarray(e["re"]) + 1j * np.asarray(e["im"]) for e in obj["modes"]}
    return FourierMap.from_modes(d, Q, modes, bool(obj.get("real_flag", True)))


def potential_to_json(p: Potential) -> dict:
    modes = [{"q": list(q), "re": v.real, "im": v.imag} for q, v in p.modes()]
    return {"dim": p.dim, "ell": p.ell, "modes": modes}


def potential_from_json(obj: dict) -> Potential:
    d = int(obj["dim"])
    modes = {tuple(e["q"]): complex(e["re"], e.get("im", 0.0)) for e in obj["modes"]}
    return Potential.from_modes(d, modes, ell=int(obj.get("ell", 0)))


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True)
