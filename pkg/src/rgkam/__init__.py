"""Multiscale solver for invariant tori of perturbed rotators, H = I^2/2 + lambda V(theta)."""
from .assembly import SolveReport, solve
from .frequency import DiophantineFrequency, certify, parse_frequency, scale_set
from .ladder import ApproximationLadder, synth_ck_potential
from .lattice import (AliasingError, FourierMap, Potential, ResonantFrequencyError, TruncationWarning,
                      compose_w0, l1_norm, weighted_norm)
from .rg import (ContractionFailure, MaxIterations, NonCauchy, RGError, SingularResonanceMatrix,
                 SolverConfig)
from .scales import CutoffFamily, LatticeScales

__all__ = [
    "AliasingError", "ApproximationLadder", "ContractionFailure", "CutoffFamily", "DiophantineFrequency",
    "FourierMap", "LatticeScales", "MaxIterations", "NonCauchy", "Potential", "RGError",
    "ResonantFrequencyError", "SingularResonanceMatrix", "SolveReport", "SolverConfig", "TruncationWarning",
    "certify", "compose_w0", "l1_norm", "parse_frequency", "scale_set", "solve", "synth_ck_potential",
    "weighted_norm",
]
