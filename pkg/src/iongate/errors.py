"""Exception hierarchy shared by the design, phase and simulation layers."""


class IonGateError(Exception):
    """Base class for all errors raised by :mod:`iongate`."""


# -- design ---------------------------------------------------------------

class DesignError(IonGateError):
    """A gate design cannot be constructed for the requested parameters."""


class NonRealCoefficient(DesignError):
    """The requested phase has the wrong sign for a real ansatz amplitude."""


class InvalidDuration(DesignError, ValueError):
    pass


class CriticalTimeProximity(DesignError):
    """The gate duration sits inside the guard band of a divergence."""

    def __init__(self, t_f, critical, guard):
        self.t_f = t_f
        self.critical = tuple(critical)
        self.guard = guard
        names = ", ".join(f"t{i + 1}={t * 1e6:.6g} us" for i, t in enumerate(self.critical))
        super().__init__(
            f"t_f={t_f * 1e6:.6g} us lies within {guard:.0%} of a critical time ({names})"
        )


class DegenerateModes(DesignError):
    pass


class DegenerateRatio(DesignError, ValueError):
    pass


class NonRealScaling(DesignError):
    pass


class OutOfRange(IonGateError, ValueError):
    pass


# -- phases ---------------------------------------------------------------

class PhaseError(IonGateError):
    pass


class QuadratureFailure(PhaseError):
    pass


class BoundaryViolation(PhaseError):
    """Trajectory does not return to rest, so the phase formulas do not apply."""


# -- simulation -----------------------------------------------------------

class SimulationError(IonGateError):
    pass


class GridTooNarrow(SimulationError):
    pass


class NoConvergence(SimulationError):
    pass


class NormDrift(SimulationError):
    pass


class BoundaryLeak(SimulationError):
    pass


class GridMismatch(SimulationError, ValueError):
    pass
