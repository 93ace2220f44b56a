"""Diophantine frequency vectors and small-divisor bookkeeping."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import ResonantFrequencyError

GOLDEN = (1 + 5**0.5) / 2


def plastic_number() -> float:
    """Real root of x^3 - x - 1."""
    roots = np.roots([1.0, 0.0, -1.0, -1.0])
    return float(roots[np.argmin(np.abs(roots.imag))].real)


def parse_frequency(value) -> np.ndarray:
    """'golden', 'cubic', a list of floats or a comma separated literal."""
    if isinstance(value, str):
        key = value.strip().lower()
        if key == "golden":
            return np.array([1.0, GOLDEN])
        if key == "cubic":
            r = plastic_number()
            return np.array([1.0, r, r * r])
        value = [float(x) for x in key.strip("()[]").split(",")]
    omega = np.asarray(value, dtype=float)
    if omega.ndim != 1 or omega.size < 1:
        raise ValueError(f"bad frequency vector {value!r}")
    return omega


def l1_shell_modes(d: int, Qmax: int) -> np.ndarray:
    """All q in Z^d with 0 < |q|_1 <= Qmax, shape (count, d)."""
    r = np.arange(-Qmax, Qmax + 1)
    grid = np.stack(np.meshgrid(*([r] * d), indexing="ij"), axis=-1).reshape(-1, d)
    n1 = np.abs(grid).sum(axis=1)
    return grid[(n1 > 0) & (n1 <= Qmax)]


@dataclass(frozen=True)
class Certificate:
    gamma: float
    nu: float
    Qmax: int
    argmin_q: tuple

    def to_json(self) -> dict:
        return {"gamma": self.gamma, "nu": self.nu, "Qmax": self.Qmax, "argmin_q": list(self.argmin_q)}


@dataclass
class DiophantineFrequency:
    """omega with a certified lower bound |omega.q| >= gamma |q|_1^(-nu) on a window."""

    omega: np.ndarray
    nu: float = 1.2
    gamma: float | None = None
    certified_Qmax: int = 0

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        if self.certified_Qmax > 0:
            self.certify(self.certified_Qmax)

    @property
    def dim(self) -> int:
        return self.omega.size

    def small_divisor(self, q) -> float:
        return float(np.dot(self.omega, np.asarray(q, dtype=float)))

    def certify(self, Qmax: int) -> Certificate:
        cert = certify(self.omega, self.nu, Qmax)
        self.gamma, self.certified_Qmax = cert.gamma, Qmax
        return cert


def _resonance_threshold(omega, n1):
    return 64 * np.finfo(float).eps * np.max(np.abs(omega)) * n1


def certify(omega, nu: float, Qmax: int) -> Certificate:
    """Exhaustive min of |omega.q| |q|_1^nu over 0 < |q|_1 <= Qmax."""
    omega = np.asarray(omega, dtype=float)
    qs = l1_shell_modes(omega.size, Qmax)
    k = np.abs(qs @ omega)
    n1 = np.abs(qs).sum(axis=1)
    bad = k <= _resonance_threshold(omega, n1)
    if bad.any():
        # name the shortest resonant q, sign fixed so its first nonzero entry is positive
        cand = qs[bad]
        q = cand[np.argmin(np.abs(cand).sum(axis=1))]
        q = q if q[np.nonzero(q)[0][0]] > 0 else -q
        raise ResonantFrequencyError(tuple(int(c) for c in q))
    vals = k * n1.astype(float) ** nu
    i = int(np.argmin(vals))
    return Certificate(float(vals[i]), float(nu), int(Qmax), tuple(int(c) for c in qs[i]))


def scale_set(omega, q, eta: float, n_max: int = 200) -> set[int]:
    """Indices n >= 0 whose multiscale piece chi_n is nonzero at omega.q."""
    from .scales import CutoffFamily

    k = float(np.dot(omega, q))
    fam = CutoffFamily(eta)
    return {n for n in range(0, n_max + 1) if fam.chi(n, k) != 0.0}


def count_modes_below(omega, eta: float, n: int, Qmax: int) -> np.ndarray:
    """Modes 0 < |q|_1 <= Qmax with |omega.q| <= eta^(n-1)."""
    omega = np.asarray(omega, dtype=float)
    qs = l1_shell_modes(omega.size, Qmax)
    return qs[np.abs(qs @ omega) <= eta ** (n - 1)]


def resonant_mode(omega, Qmax: int):
    """First exactly resonant q within |q|_1 <= Qmax, or None."""
    try:
        certify(omega, 1.0, Qmax)
    except ResonantFrequencyError as e:
        return e.q
    return None


__all__ = [
    "Certificate", "DiophantineFrequency", "GOLDEN", "ResonantFrequencyError", "certify",
    "count_modes_below", "l1_shell_modes", "parse_frequency", "plastic_number", "resonant_mode",
    "scale_set",
]
