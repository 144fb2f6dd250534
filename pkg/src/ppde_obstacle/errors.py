"""Error taxonomy shared by all solver modules."""


class PpdeError(Exception):
    """Base class for all package errors."""

    kind = "error"

    def record(self) -> dict:
        """Machine-readable error record (used by the CLI)."""
        return {"error": self.kind, "message": str(self)}


class DomainError(PpdeError, ValueError):
    """Input outside an operation's stated domain (bad time, misaligned grid, ...)."""

    kind = "domain"


class ParameterError(PpdeError, ValueError):
    """Discretization parameters violate a stability/CFL constraint."""

    kind = "parameter"


class NumericError(PpdeError, RuntimeError):
    """A solve produced non-finite values or an iteration failed to converge."""

    kind = "numeric"


class BudgetError(PpdeError, RuntimeError):
    """An exhaustive or recursive computation exceeded its stated budget."""

    kind = "budget"
