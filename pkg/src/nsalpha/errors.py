"""Exception types raised across the package."""


class InvalidModeError(ValueError):
    """A wavevector outside the retained set (or the zero mode) was requested."""


class BoxMismatchError(ValueError):
    """Operands live on different boxes or resolutions."""


class ConfigurationError(ValueError):
    """Invalid configuration detected before any computation."""


class PreconditionError(ValueError):
    pass


class TimeRangeError(ValueError):
    """Requested time or shift falls outside a trajectory's span."""


class InvalidPsiError(ValueError):
    pass


class DivergedError(RuntimeError):
    """Non-finite coefficients appeared during time stepping.

    ``time`` is the simulation time of the first failed step and ``member``
    is the ensemble index when the failure happened inside a batch solve.
    """

    def __init__(self, time, member=None):
        self.time = float(time)
        self.member = member
        where = f" (member {member})" if member is not None else ""
        super().__init__(f"solution diverged at t={self.time:.6g}{where}")


class ExperimentError(RuntimeError):
    pass
