"""Exception types shared across the package."""


class MeshoptError(Exception):
    """Base class for all package errors."""


class MissingGain(MeshoptError):
    """A link references a path gain absent from the gain map."""


class CapacityDomain(MeshoptError):
    """Capacity model incompatible with the requested optimization path."""


class CapacityModelMismatch(MeshoptError):
    """Power control run against a capacity model that is not log-concave in power."""


class RoutingCycle(MeshoptError):
    """The active routing graph of a session contains a cycle."""

    def __init__(self, session, cycle):
        self.session = session
        self.cycle = list(cycle)
        super().__init__(f"session {session}: routing cycle {self.cycle}")


class AcyclicityViolation(MeshoptError):
    """Internal assertion: a blocked-set construction yielded a cyclic allowed graph."""


class UnboundedCurvature(MeshoptError):
    """The requested curvature bound is provably unbounded on the sublevel set."""


class EmptyAllowedSet(MeshoptError):
    """No allowed out-neighbors remain for a (node, session) pair."""


class EmptyFreeSet(MeshoptError):
    """Simplex projection called with every coordinate pinned to zero."""


class DegenerateBound(MeshoptError):
    """A Hessian-bound bracket evaluated to zero; no positive scaling exists."""


class ScopeTooLarge(MeshoptError):
    """Local message scope k exceeds the number of other nodes."""


class InitialInfeasible(MeshoptError):
    """Optimizer started from a configuration with infinite cost."""


class DescentGuardExhausted(MeshoptError):
    """Step halving failed to restore monotone descent."""


class ConnectivityFailure(MeshoptError):
    """Random instance generation failed to produce a usable network."""


class NoPath(MeshoptError):
    """Min-hop route requested between disconnected nodes."""
