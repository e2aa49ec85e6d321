"""Exception hierarchy shared by every module of the package."""


class OVDPError(Exception):
    """Base class for all package errors."""


class StructuralError(OVDPError, ValueError):
    """Shapes, groupings or grid layouts that do not fit together."""


class NumericError(OVDPError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class DomainError(OVDPError, ValueError):
    """A parameter lies outside the domain of the operation."""


class CapacityError(OVDPError, MemoryError):
    """Dense materialization would exceed the configured entry cap."""

    def __init__(self, needed, cap):
        self.needed = needed
        self.cap = cap
        super().__init__(
            f"materialization needs {needed} entries, exceeding cap of {cap}"
        )


class DegenerateError(OVDPError, ZeroDivisionError):
    """A formula divides by zero or raises zero to an undefined power."""


class DivergenceError(OVDPError, ArithmeticError):
    """An iterate became non-finite during P-PDS."""

    def __init__(self, t, index, kind="primal"):
        self.t = t
        self.index = index
        self.kind = kind
        super().__init__(f"non-finite {kind} variable {index} at iteration {t}")


class OracleFailure(OVDPError, RuntimeError):
    """No pseudo-oracle candidate yielded a feasible objective."""
