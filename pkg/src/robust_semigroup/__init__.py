"""Distributionally robust Levy semigroups on grids and their limiting PDE."""
from .errors import ConfigurationError, DomainError, ModelError, ResourceError, RobustSemigroupError
from .measures import DiscreteMeasure, GridSpec, LevyModel, increment_measure, moment_p
from .semigroup import DyadicSchedule, GridFunction, iterate, step
from .transport import Penalty, phi_conjugate, robust_sup_ball, robust_sup_penalty, wasserstein_1d, wasserstein_lp

__version__ = "0.1.0"
