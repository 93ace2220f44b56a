"""Outer ladder of analytic approximations V^j of a finitely smooth potential."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .lattice import Potential, l1_index, lattice_axes, sup_norm_index

BASE = 8


def ladder_constants(M: int, j: int) -> tuple[int, Fraction, Fraction]:
    """(gamma_j, alpha_j, alpha_bar_j) = (M 8^j, 1/(M 8^(j-2)), 1/(M 8^(j+1))), exactly."""
    if M < 1 or j < 0:
        raise ValueError("need M >= 1 and j >= 0")
    if j > 300:
        raise OverflowError(f"ladder index j={j} is absurdly large")
    gamma = M * BASE**j
    alpha = Fraction(BASE**2, M * BASE**j)
    alpha_bar = Fraction(1, M * BASE ** (j + 1))
    return gamma, alpha, alpha_bar


def truncate(pot: Potential, gamma: int) -> Potential:
    """Sharp cut to |q|_inf <= gamma; the storage window is kept."""
    mask = sup_norm_index(pot.dim, pot.lattice_bound) <= gamma
    return Potential(pot.coeffs * mask, pot.ell)


def smoothness_constant(pot: Potential, ell: float) -> float:
    """sum_q |q|_1^(ell+1) |v(q)|."""
    n1 = l1_index(pot.dim, pot.lattice_bound).astype(float)
    return float(np.sum(n1 ** (ell + 1) * np.abs(pot.coeffs)))


def synth_ck_potential(d: int, ell: int, window: int, seed: int, c: float = 1.0) -> Potential:
    """Hermitian v(q) = c rho(q) / |q|_1^(ell+2+d) on |q|_inf <= window, v(0) = 0.

    rho(q) are unit-modulus phases drawn from ``seed``; one phase per pair
    {q, -q} so that v(-q) = conj v(q) holds exactly.
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    rng = np.random.default_rng(seed)
    n = 2 * window + 1
    phases = rng.uniform(0.0, 2 * np.pi, size=(n,) * d)
    flat = phases.ravel()
    # index i and its mirror n^d - 1 - i hold q and -q; keep the lower one
    m = flat.size
    idx = np.arange(m)
    flat = np.where(idx < m - 1 - idx, flat, -flat[::-1])
    phases = flat.reshape((n,) * d)
    n1 = l1_index(d, window).astype(float)
    mag = np.zeros_like(n1)
    nz = n1 > 0
    mag[nz] = c / n1[nz] ** (ell + 2 + d)
    return Potential(mag * np.exp(1j * phases), ell)


def tail_difference_bound(pot: Potential, ell: float, j: int, M: int) -> tuple[float, float]:
    """Annulus sum of |q||v(q)| e^(|q|/(2 gamma_j)) and its ratio to gamma_{j-1}^(-ell).

    The annulus is gamma_{j-1} < |q|_inf <= gamma_j; weights use |q|_1.
    """
    if j < 1:
        raise ValueError("need j >= 1")
    g, _, _ = ladder_constants(M, j)
    gp, _, _ = ladder_constants(M, j - 1)
    qinf = sup_norm_index(pot.dim, pot.lattice_bound)
    n1 = l1_index(pot.dim, pot.lattice_bound).astype(float)
    ann = (qinf > gp) & (qinf <= g)
    s = float(np.sum(n1[ann] * np.abs(pot.coeffs[ann]) * np.exp(n1[ann] / (2.0 * g))))
    return s, s * float(gp) ** ell


def strip_sup(pot: Potential, width: float, samples: int = 100, seed: int = 0) -> float:
    """max |V(xi)| over random xi with |Im xi|_1 <= width."""
    rng = np.random.default_rng(seed)
    d = pot.dim
    re = rng.uniform(0, 2 * np.pi, size=(samples, d))
    im = rng.uniform(-1, 1, size=(samples, d))
    im *= width / np.maximum(np.abs(im).sum(axis=1, keepdims=True), 1e-300)
    xi = re + 1j * im
    axes = lattice_axes(d, pot.lattice_bound)
    nz = pot.coeffs != 0
    qs = np.stack([a[nz] for a in axes], axis=1)
    vals = np.exp(-1j * xi @ qs.T) @ pot.coeffs[nz]
    return float(np.max(np.abs(vals)))


@dataclass
class ApproximationLadder:
    potential: Potential
    M: int = 8
    jmax: int | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def gamma(self, j: int) -> int:
        return ladder_constants(self.M, j)[0]

    def V(self, j: int) -> Potential | None:
        """V^j, or None for j < 0 (the empty base of the ladder)."""
        if j < 0:
            return None
        if j not in self._cache:
            self._cache[j] = truncate(self.potential, self.gamma(j))
        return self._cache[j]

    def covering_stage(self) -> int:
        """First j whose ball contains every stored mode."""
        top = self.potential.max_mode
        j = 0
        while self.gamma(j) < top:
            j += 1
        return j

    def last_stage(self) -> int:
        return self.covering_stage() if self.jmax is None else self.jmax
