"""fluctuo: conservative stochastic PDEs with structured correlated noise.

A desk-scale laboratory for nonlinear diffusion driven by conservative noise:
a mass-exact stochastic solver, quadratic-variation measurements, entropy
dissipation diagnostics, the deterministic skeleton equation, and rate
function evaluation for the small-noise limit.
"""

from .errors import (CFLViolation, ConfigurationError, DomainError,
                     GridMismatchError, MassConservationError, NegativityError,
                     SingularWeightError)
from .grid import Field, Grid, gradient, divergence, laplacian, integrate, \
    l1_distance, mass_excess
from .nonlinearity import (AssumptionReport, EntropyFunction, NonlinearitySpec,
                           check_assumptions)
from .noise import (NoiseIncrement, NoiseParams, NoiseScalingEntry,
                    build_kernel, div_quadratic_variation, quadratic_variation,
                    sample_increment, scaling_regime_check)
from .solver import (SolverConfig, Trajectory, coupled_solve, solve,
                     solve_controlled, step_ito)
from .diagnostics import (EntropyReport, entropy_estimate_check,
                          entropy_estimate_ensemble, entropy_of,
                          dissipation_of, kinetic_l1_identity, measure_tail,
                          measure_tail_ensemble, vanishing_at_infinity_check)
from .skeleton import (ControlField, skeleton_entropy_check, solve_skeleton,
                       weak_form_residual)
from .ldp import (RateEvaluation, mc_small_noise, minimal_control,
                  rate_function, roundtrip_target)

__version__ = "0.1.0"
