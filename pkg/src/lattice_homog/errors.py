"""Exception hierarchy.

Two families matter to callers: ``ValidationError`` (malformed input, CLI
exit code 2) and ``ModelError`` (a well-formed problem that fails
numerically or physically, CLI exit code 3).
"""

from __future__ import annotations

from dataclasses import dataclass


class LatticeHomogError(Exception):
    """Base class for all package errors."""


@dataclass(frozen=True)
class Violation:
    """One validation finding. ``warning`` findings do not fail validation."""

    code: str
    message: str
    warning: bool = False

    def __str__(self) -> str:
        tag = "warning" if self.warning else "error"
        return f"[{tag}] {self.code}: {self.message}"


class ValidationError(LatticeHomogError):
    """Raised when a metamaterial description violates its invariants."""

    def __init__(self, violations):
        self.violations = tuple(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class SingularBasis(ValidationError):
    def __init__(self, message="basis vectors are linearly dependent"):
        super().__init__([Violation("SingularBasis", message)])


class ModelError(LatticeHomogError):
    """A numerical or physical failure on valid input."""


class NonpositiveLength(ModelError):
    pass


class ZeroWavevector(ModelError):
    pass


class WavevectorOutsideBZ(ModelError):
    pass


class SingularLimit(ModelError):
    """The localized compliance limit is not invertible (mechanism or
    unstable limit)."""


class NoConvergence(ModelError):
    """Richardson extrapolation residual stayed above tolerance."""


class RepresentationFailure(ModelError):
    """The frame-indifferent micropolar ansatz does not fit the computed
    limit within tolerance."""


class IllConditionedFit(ModelError):
    pass


class UnsupportedJointCount(ModelError):
    pass


class EmptyStructure(ModelError):
    pass


class UnbalancedLoad(ModelError):
    pass


class SingularMode(ModelError):
    """The dynamical matrix is singular at a loaded wavevector."""


class SingularSystem(ModelError):
    """The assembled real-space system cannot be solved (insufficient
    constraints or internal mechanism)."""


class SingularOracle(ModelError):
    """A closed-form reference value is undefined for these parameters."""
