"""Numerical Orlicz-Besov extension toolkit.

Young functions and their growth constants, rasterized planar domains with
regularity scans, Whitney covers of the complement, reflected quasi-cubes,
the explicit extension operator, and Luxemburg-type increment seminorms,
plus a CLI that drives desk-scale experiments end to end.
"""

from .errors import InvariantViolation, ObextError, QuadratureError, UsageError
from .geometry import (DomainGrid, DomainSpec, SamplingPlan, ahlfors_constant,
                       ball_measure, ball_measure_analytic, diam, parse_domain,
                       rasterize)
from .orlicz_norms import (GridFunction, LuxemburgResult, bmo_norm,
                           exp_integral_check, frac_sobolev, luxemburg,
                           pair_energy, poincare_check)
from .reflection import ReflectionMap, ShellIndex, build_reflections, epsilon0, shells
from .whitney import DyadicCube, PartitionOfUnity, WhitneyCover, decompose
from .young import (CphiResult, SubexpReport, YoungFunction, check_subexponential,
                    compute_cphi, parse_young)

__version__ = "0.1.0"
