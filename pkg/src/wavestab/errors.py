"""Exception hierarchy shared by the analyzers."""


class WavestabError(Exception):
    """Base class for all toolkit errors."""


class DomainError(WavestabError, ValueError):
    """An input lies outside the domain of an operation."""


class SystemFormatError(DomainError):
    """A system description is malformed; ``field`` names the culprit."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class GateError(WavestabError):
    """The system fails a structural precondition (e.g. ``c0 = 0``)."""


class PoleEvaluationError(WavestabError):
    def __init__(self, s):
        super().__init__(f"transfer function evaluated at a pole, s={s!r}")
        self.s = s


class NoChannelPoles(WavestabError):
    """The reflection coefficient is zero: the channel is a pure delay."""


class DegenerateFamily(WavestabError):
    """The crossing set is a continuum (identically vanishing resultant)."""


class DegenerateTendency(WavestabError):
    def __init__(self, omega, T):
        super().__init__(f"root tendency is degenerate at omega={omega!r}, T={T!r}")
        self.omega = omega
        self.T = T


class MarginalAtZero(WavestabError):
    """A characteristic root sits on the imaginary axis at zero delay."""


class NotHurwitz(WavestabError):
    pass


class AssemblyError(WavestabError):
    pass


class SolverUnavailable(WavestabError):
    pass
