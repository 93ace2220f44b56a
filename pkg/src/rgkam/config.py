"""Run configuration (JSON) and potential loading."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frequency import parse_frequency
from .ladder import synth_ck_potential
from .lattice import Potential, potential_from_json
from .rg import SolverConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "eta": 0.5,
    "M": 8,
    "jmax": None,
    "nu": 1.2,
    "ell": None,
    "lattice_bound": None,
    "seed": 0,
    "continuation": False,
    "diagnostics": True,
    "h_norm": True,
    "probes": None,
    "tolerances": {"scale_tol": 1e-12, "stage_tol": 1e-11, "global_tol": 1e-10,
                   "residual_tol": 1e-9, "ward_tol": 1e-8, "hermitian_tol": 1e-14, "cs_rtol": 1e-9},
    "trajectory": {"t_max": 50.0, "samples": 201, "theta0": None},
    "output": {"dir": "out"},
}


@dataclass
class RunConfig:
    frequency: object
    potential: object
    lam: float
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)

    # -- construction
    @classmethod
    def from_dict(cls, obj: dict, base_dir: Path | None = None) -> "RunConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        for key in ("frequency", "potential", "lambda"):
            if key not in obj:
                raise ConfigError(f"config is missing '{key}'")
        raw = copy.deepcopy(DEFAULTS)
        for k, v in obj.items():
            if isinstance(v, dict) and isinstance(raw.get(k), dict):
                raw[k].update(v)
            else:
                raw[k] = v
        try:
            lam = float(raw["lambda"])
        except (TypeError, ValueError):
            raise ConfigError("lambda must be a real number") from None
        eta = raw["eta"]
        if not (isinstance(eta, (int, float)) and 0 < eta < 1):
            raise ConfigError("eta must lie in (0, 1)")
        if not (isinstance(raw["M"], int) and raw["M"] >= 1):
            raise ConfigError("M must be a positive integer")
        cfg = cls(raw["frequency"], raw["potential"], lam, raw, base_dir or Path.cwd())
        try:
            cfg.omega
        except ValueError as e:
            raise ConfigError(str(e)) from None
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            obj = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
        return cls.from_dict(obj, path.parent)

    def with_param(self, name: str, value: float) -> "RunConfig":
        raw = copy.deepcopy(self.raw)
        raw[name] = value
        return RunConfig.from_dict(raw, self.base_dir)

    # -- derived
    @property
    def omega(self) -> np.ndarray:
        return parse_frequency(self.frequency)

    def load_potential(self) -> Potential:
        desc = self.potential
        if isinstance(desc, str):
            desc = {"path": desc}
        if not isinstance(desc, dict):
            raise ConfigError("potential must be a path or an object")
        if "synthetic" in desc:
            s = desc["synthetic"]
            try:
                return synth_ck_potential(int(s.get("dim", len(self.omega))), int(s["ell"]),
                                          int(s["window"]), int(s.get("seed", self.raw["seed"])),
                                          float(s.get("amplitude", 1.0)))
            except KeyError as e:
                raise ConfigError(f"synthetic potential needs {e}") from None
        if "path" in desc:
            p = Path(desc["path"])
            if not p.is_absolute():
                p = self.base_dir / p
            try:
                desc = json.loads(p.read_text())
            except FileNotFoundError:
                raise ConfigError(f"potential file {p} not found") from None
            except json.JSONDecodeError as e:
                raise ConfigError(f"potential file {p} is not valid JSON: {e}") from None
        try:
            pot = potential_from_json(desc)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad potential description: {e}") from None
        if pot.hermitian_defect() > 1e-14 * max(1.0, float(np.abs(pot.coeffs).max(initial=0))):
            raise ConfigError("potential coefficients are not Hermitian (V must be real)")
        if pot.dim != len(self.omega):
            raise ConfigError(f"potential dimension {pot.dim} does not match frequency dimension "
                              f"{len(self.omega)}")
        return pot

    def lattice_bound(self, pot: Potential) -> int:
        Q = self.raw["lattice_bound"]
        if Q is None:
            return max(pot.max_mode, 1) * 16
        if not isinstance(Q, int) or Q < pot.max_mode or Q < 1:
            raise ConfigError(f"lattice_bound must be an integer >= largest potential mode {pot.max_mode}")
        return Q

    def ell(self, pot: Potential):
        return self.raw["ell"] if self.raw["ell"] is not None else pot.ell

    @property
    def tolerances(self) -> dict:
        return self.raw["tolerances"]

    def solver(self) -> SolverConfig:
        t = self.tolerances
        probes = self.raw["probes"]
        return SolverConfig(scale_tol=float(t["scale_tol"]), stage_tol=float(t["stage_tol"]),
                            probes=[tuple(p) for p in probes] if probes else None,
                            diagnostics=bool(self.raw["diagnostics"]), h_norm=bool(self.raw["h_norm"]),
                            continuation=bool(self.raw["continuation"]))

    def echo(self) -> dict:
        out = copy.deepcopy(self.raw)
        out["lambda"] = self.lam
        return out
