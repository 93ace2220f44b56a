"""Smooth multiscale partition of the small divisors omega.q.

The profile chi_bar is built from the bump h(u) = C exp(1/(u^2 - 1)):
chi_bar = 1 for |k| <= eta, 0 for |k| >= 1, and in between it is one minus
the normalised primitive of h, rescaled to the transition band.  Then

    chi_bar_n(k) = chi_bar(eta^-n k)
    chi_0 = 1 - chi_bar_1,   chi_n = chi_bar_n - chi_bar_{n+1}  (n >= 1)
    gamma_n = chi_n / k^2,   Gamma_<n = (1 - chi_bar_n) / k^2.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .lattice import small_divisors

TABLE_NODES = 2049


def _bump(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1
    out[inside] = np.exp(1.0 / (u[inside] ** 2 - 1.0))
    return out


@functools.lru_cache(maxsize=1)
def _profile_table():
    """Primitive of the normalised bump on [-1, 1], built symmetrically."""
    f = lambda t: float(_bump(t))  # noqa: E731
    half = (TABLE_NODES + 1) // 2
    u = np.linspace(-1.0, 1.0, TABLE_NODES)
    left = u[:half]
    G = np.zeros(half)
    for i in range(1, half):
        G[i] = G[i - 1] + quad(f, left[i - 1], left[i], epsabs=1e-17, epsrel=1e-14)[0]
    total = 2.0 * G[-1]
    Hl = G / total
    H = np.concatenate([Hl, 1.0 - Hl[-2::-1]])
    C = 1.0 / total
    spline = CubicHermiteSpline(u, H, C * _bump(u))
    return C, spline


TAIL_SPLIT = 0.5
TAIL_NODES = 1200
TAIL_START = -0.998  # H(-0.998) ~ 1e-110; further left the remainder is held constant


def _tail_remainder(u):
    return -1.0 / (1.0 - u * u) + 2.0 * np.log1p(-u * u)


@functools.lru_cache(maxsize=1)
def _tail_table():
    """log H(u) minus its essential singularity, tabulated on [TAIL_START, -TAIL_SPLIT].

    H(u) ~ C exp(-1/(1-u^2)) (1-u^2)^2 / (2|u|) as u -> -1, so
    G(u) = log H(u) + 1/(1-u^2) - 2 log(1-u^2) is smooth and bounded there.
    Node values come from relative-accuracy quadrature, so H stays positive
    and accurate where 1 - H would cancel.
    """
    C = bump_constant()
    f = lambda t: float(_bump(t))  # noqa: E731
    u = np.linspace(TAIL_START, -TAIL_SPLIT, TAIL_NODES)
    H = np.empty_like(u)
    # all the mass left of TAIL_START sits within one short interval of it
    H[0] = C * quad(f, -1.0, u[0], epsabs=0.0, epsrel=2e-14, points=[u[0] - 1e-4])[0]
    for i in range(1, u.size):
        H[i] = H[i - 1] + C * quad(f, u[i - 1], u[i], epsabs=0.0, epsrel=2e-14)[0]
    G = np.log(H) - _tail_remainder(u)
    return CubicSpline(u, G)


def _left_tail(u):
    """H(u) for u <= -TAIL_SPLIT, accurate in relative terms."""
    g = _tail_table()(np.maximum(u, TAIL_START))
    with np.errstate(under="ignore"):
        return np.exp(g + _tail_remainder(u))


def bump_constant() -> float:
    """Normalisation C with int h = 1."""
    return _profile_table()[0]


def bump(u):
    return bump_constant() * _bump(u)


def bump_prime(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1
    ui = u[inside]
    out[inside] = bump_constant() * np.exp(1.0 / (ui**2 - 1.0)) * (-2.0 * ui / (ui**2 - 1.0) ** 2)
    return out


def bump_primitive(u):
    """H(u) = int_{-1}^u h, via the Hermite table."""
    u = np.asarray(u, dtype=float)
    spline = _profile_table()[1]
    out = np.where(u <= -1.0, 0.0, 1.0).astype(float)
    mid = np.abs(u) < TAIL_SPLIT
    out[mid] = spline(u[mid])
    left = (u > -1.0) & (u <= -TAIL_SPLIT)
    out[left] = _left_tail(u[left])
    right = (u < 1.0) & (u >= TAIL_SPLIT)
    out[right] = 1.0 - _left_tail(-u[right])
    return out


def bump_coprimitive(u):
    """1 - H(u) = H(-u), without cancellation near u = 1."""
    return bump_primitive(-np.asarray(u, dtype=float))


@dataclass(frozen=True)
class CutoffFamily:
    """Multiscale cutoffs with ratio eta in (0, 1)."""

    eta: float

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")

    # -- base profile
    def _u(self, k):
        return (2.0 * np.abs(k) - 1.0 - self.eta) / (1.0 - self.eta)

    def chi_bar(self, k):
        k = np.asarray(k, dtype=float)
        return bump_coprimitive(self._u(k))

    def one_minus_chi_bar(self, k):
        k = np.asarray(k, dtype=float)
        return bump_primitive(self._u(k))

    def chi_bar_d1(self, k):
        k = np.asarray(k, dtype=float)
        return -bump(self._u(k)) * (2.0 / (1.0 - self.eta)) * np.sign(k)

    def chi_bar_d2(self, k):
        k = np.asarray(k, dtype=float)
        return -bump_prime(self._u(k)) * (2.0 / (1.0 - self.eta)) ** 2

    # -- rescaled family
    def chi_bar_n(self, n: int, k, order: int = 0):
        s = self.eta ** (-n)
        f = (self.chi_bar, self.chi_bar_d1, self.chi_bar_d2)[order]
        return s**order * f(s * np.asarray(k, dtype=float))

    def one_minus_chi_bar_n(self, n: int, k):
        return self.one_minus_chi_bar(self.eta ** (-n) * np.asarray(k, dtype=float))

    def chi(self, n: int, k, order: int = 0):
        if order == 0:
            # the transition bands of chi_bar_n and chi_bar_(n+1) are disjoint, so
            # each piece is one accurate term: chi_bar_n above eta^(n+1), else 1 - chi_bar_(n+1)
            k = np.asarray(k, dtype=float)
            low = self.one_minus_chi_bar_n(n + 1, k)
            if n == 0:
                return low
            return np.where(np.abs(k) >= self.eta ** (n + 1), self.chi_bar_n(n, k), low)
        if n == 0:
            return -self.chi_bar_n(1, k, order)
        return self.chi_bar_n(n, k, order) - self.chi_bar_n(n + 1, k, order)

    def gamma(self, n: int, k, order: int = 0):
        """gamma_n(k) = chi_n(k)/k^2 and its first two k-derivatives."""
        return _over_k2(lambda o: self.chi(n, k, o), k, order)

    def gamma_lt(self, n: int, k, order: int = 0):
        """Gamma_<n(k) = (1 - chi_bar_n(k))/k^2; zero for n = 0."""
        k = np.asarray(k, dtype=float)
        if n <= 0:
            return np.zeros_like(k)

        def num(o):
            return self.one_minus_chi_bar_n(n, k) if o == 0 else -self.chi_bar_n(n, k, o)

        return _over_k2(num, k, order)

    def support(self, n: int) -> tuple[float, float]:
        """Open interval of |k| where chi_n can be nonzero."""
        if n == 0:
            return self.eta**2, np.inf
        return self.eta ** (n + 2), self.eta**n

    def complete_scale(self, min_divisor: float) -> int:
        """Smallest n with Gamma_<n equal to the full inverse on |k| >= min_divisor."""
        if min_divisor <= 0:
            raise ValueError("min_divisor must be positive")
        return max(1, int(np.ceil(np.log(min_divisor) / np.log(self.eta) - 1e-12)))


def _over_k2(num, k, order):
    """Derivatives of f(k)/k^2 from those of f; zero where f vanishes identically near 0."""
    k = np.asarray(k, dtype=float)
    out = np.zeros(np.broadcast(k, k).shape)
    nz = k != 0
    kk = k[nz] if k.ndim else (k if nz else None)
    if k.ndim == 0:
        if not nz:
            return np.float64(0.0)
        f = [num(o) for o in range(order + 1)]
        return np.float64(_quot(f, float(k), order))
    f = [np.asarray(num(o))[nz] for o in range(order + 1)]
    out[nz] = _quot(f, kk, order)
    return out


def _quot(f, k, order):
    if order == 0:
        return f[0] / k**2
    if order == 1:
        return f[1] / k**2 - 2.0 * f[0] / k**3
    return f[2] / k**2 - 4.0 * f[1] / k**3 + 6.0 * f[0] / k**4


class LatticeScales:
    """Cutoff kernels tabulated on the lattice window of a given frequency."""

    def __init__(self, omega, Q: int, eta: float):
        self.omega = np.asarray(omega, dtype=float)
        self.Q = Q
        self.family = CutoffFamily(eta)
        self.kappa = small_divisors(self.omega, Q)
        d = self.omega.size
        self.origin = (Q,) * d
        k = np.abs(self.kappa.copy())
        k[self.origin] = np.inf
        self.min_divisor = float(k.min())

    @property
    def eta(self) -> float:
        return self.family.eta

    @property
    def n_complete(self) -> int:
        return self.family.complete_scale(self.min_divisor)

    def gamma_lt(self, n: int, shift: float = 0.0, order: int = 0) -> np.ndarray:
        g = self.family.gamma_lt(n, self.kappa + shift, order)
        if shift == 0.0:
            g[self.origin] = 0.0
        return g

    def gamma(self, n: int, shift: float = 0.0, order: int = 0) -> np.ndarray:
        return self.family.gamma(n, self.kappa + shift, order)

    def chi_bar(self, n: int) -> np.ndarray:
        return self.family.chi_bar_n(n, self.kappa)

    def chi(self, n: int) -> np.ndarray:
        return self.family.chi(n, self.kappa)

    def low_modes(self, level: int) -> np.ndarray:
        """Mask of modes with |omega.q| <= eta^level."""
        return np.abs(self.kappa) <= self.eta**level

    def occupancy(self, n_max: int | None = None) -> list[dict]:
        """Per-piece table: support of chi_n, lattice modes it touches, sup of gamma_n."""
        n_max = self.n_complete if n_max is None else n_max
        rows = []
        for n in range(0, n_max):
            lo, hi = self.family.support(n)
            g = self.gamma(n)
            g[self.origin] = 0.0
            on = self.chi(n) != 0
            on[self.origin] = False
            rows.append({
                "n": n, "annulus_lo": lo, "annulus_hi": hi, "mode_count": int(on.sum()),
                "max_gamma_n": float(np.max(np.abs(g), initial=0.0)),
            })
        return rows


def smoothness_constants(eta: float, samples: int = 10_000) -> tuple[float, float]:
    """Sampled sup of |chi_bar'|, |chi_bar''| over the transition band."""
    fam = CutoffFamily(eta)
    k = np.linspace(-1.0, 1.0, samples)
    return float(np.max(np.abs(fam.chi_bar_d1(k)))), float(np.max(np.abs(fam.chi_bar_d2(k))))


def kernel_sup_constants(scales: LatticeScales, n: int, order: int, n_shifts: int = 21) -> float:
    """max over |kappa| <= eta^n of |d^order Gamma_{n-1}[kappa](q)|, times eta^((2+order) n)."""
    eta = scales.eta
    worst = 0.0
    for s in np.linspace(-(eta**n), eta**n, n_shifts):
        g = scales.gamma(n - 1, shift=float(s), order=order)
        g[scales.origin] = 0.0
        worst = max(worst, float(np.max(np.abs(g))))
    return worst * eta ** ((2 + order) * n)


def kernel_sup_bound(eta: float, n: int, order: int, samples: int = 200_001) -> float:
    """Scale-free constant bounding kernel_sup_constants(., n, order).

    For m >= 1, chi_m(k) = chi_1(eta^-(m-1) k), so gamma_m(k) is
    eta^-(2(m-1)) gamma_1(eta^-(m-1) k) and its sup norms rescale exactly;
    n = 1 uses gamma_0 directly.
    """
    fam = CutoffFamily(eta)
    if n == 1:
        u = np.linspace(eta**2, 2.0, samples)
        return float(np.max(np.abs(fam.gamma(0, u, order)))) * eta ** (2 + order)
    u = np.linspace(eta**3, eta, samples)
    return float(np.max(np.abs(fam.gamma(1, u, order)))) * eta ** (2 * (2 + order))
