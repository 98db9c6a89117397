"""High-order variational integrators and symplectic optimal control.

Two families of one-step methods for forced mechanical systems (a symplectic
partitioned Runge-Kutta form and a symplectic Galerkin form), a direct
transcription of optimal control problems built on them, and the multiplier
transformation identifying the transcription's KKT system with the same
discretization applied to the continuous state-adjoint equations.
"""

__version__ = "1.0.0"

from .errors import (DegenerateFit, DegenerateNodes, DimensionMismatch,
                     HovicError, NoConvergence, NonCoerciveVariant,
                     SchemeMismatch, SingularJacobian, SingularKkt,
                     SingularMass, UnknownVariant, UnsupportedStageCount,
                     UsageError, ZeroWeight)
from .quadrature import (CollocationScheme, Family, SgCoefficients,
                         SprkCoefficients, make_scheme, sg_coefficients,
                         sprk_coefficients)
from .mechanics import (BenchmarkProblem, CostPair, MechanicalSystem,
                        builtin_models, energy, hager_cost, hager_exact,
                        inverse_legendre, legendre, rhs)
from .integrators import (DiscreteTrajectory, SchemeKind, StageBlock,
                          StepperConfig, integrate, make_stepper,
                          measure_order, sg_step, sprk_step,
                          verlet_reference_step)
from .ocp import (KktSolution, NlpLayout, OcpDefinition, Transcription,
                  hager_cost_variant, hager_ocp, lobatto_cost_rule, solve_kkt,
                  transcribe)
from .adjoint import (BvpSolution, CommutationReport, TransformedMultipliers,
                      adjoint_residual, commutation_check,
                      solve_state_adjoint_bvp, transform, untransform)
