"""Exception hierarchy for matchprior."""


class MatchpriorError(Exception):
    """Base class for all package errors."""


class DomainError(MatchpriorError):
    """Parameter point outside the model's open parameter domain."""


class EvaluationError(MatchpriorError):
    """Non-finite log-likelihood or other evaluation failure."""


class SingularityError(MatchpriorError):
    """Singular information-type matrix; message names the offending minor."""


class FitError(MatchpriorError):
    """Maximizer failure (non-convergence, saddle, boundary escape)."""


class BoundaryError(FitError):
    """Constrained fit escaped to the domain boundary (e.g. sigma -> 0)."""


class SaddleError(FitError):
    """Terminated at a point with an indefinite Hessian."""


class ProfileInconsistencyError(MatchpriorError):
    """W(psi) negative beyond round-off; the profile solver failed."""


class CurvatureError(MatchpriorError):
    """Nuisance Hessian block not negative definite."""


class QuadratureError(MatchpriorError):
    """Quadrature self-validation failed; carries the refinement trace."""


class BracketError(MatchpriorError):
    """Root bracketing for quantile inversion failed."""


class CoverageIntegrityError(MatchpriorError):
    """Too much quadrature weight lost to per-node posterior failures."""


class ExperimentIntegrityError(MatchpriorError):
    """More than the tolerated share of Monte Carlo replicates failed."""


class ConfigError(MatchpriorError):
    """Invalid experiment configuration."""
