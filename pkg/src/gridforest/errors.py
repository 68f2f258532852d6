"""Exception types shared across the package."""


class GridForestError(Exception):
    """Base class for all errors raised by gridforest."""


# -- network / forest construction -------------------------------------------

class CycleDetected(GridForestError):
    """Operational lines close a loop."""


class DisconnectedLoadNode(GridForestError):
    """A load node is not reachable from any substation over operational lines."""


class MultipleSlacksInComponent(GridForestError):
    """An operational component contains more than one substation."""


class ParallelLine(GridForestError):
    """Two lines share the same endpoint pair (simple graphs only)."""


class UnknownNode(GridForestError):
    """Node id not present (or not of the required role)."""


class NotParent(GridForestError):
    """The given node is not the parent of the other node."""


class DifferentTrees(GridForestError):
    """The two nodes belong to different trees of the forest."""


# -- forward model / sampling -------------------------------------------------

class DimensionMismatch(GridForestError):
    """Vector length does not match the number of load nodes."""


class InvalidCovariance(GridForestError):
    """Per-node (p, q) covariance violates the Cauchy-Schwarz bound."""


# -- empirical moments ----------------------------------------------------------

class TooFewSamples(GridForestError):
    """At least two samples are required for centered second moments."""


class UnobservedNode(GridForestError):
    """Statistic requested for a node without observations."""


# -- learners -------------------------------------------------------------------

class AmbiguousParent(GridForestError):
    """Parent selection tied within tolerance."""


class IncompleteCover(GridForestError):
    """Learning finished with nodes left unattached.

    Carries ``parent_map`` with the partial recovery.
    """

    def __init__(self, msg, parent_map=None):
        super().__init__(msg)
        self.parent_map = dict(parent_map or {})


class SingularSystem(GridForestError):
    """Per-edge estimation system is numerically singular."""


class NegativeVarianceEstimate(GridForestError):
    """A solved variance came out negative (strict mode only)."""


class NoRealRoot(GridForestError):
    """Edge-parameter quadratic has no real root within tolerance."""


class BothRootsFeasible(GridForestError):
    """Edge-parameter quadratic admits two indistinguishable solutions.

    Carries ``candidates`` with both (r, x, cov_sum) triples.
    """

    def __init__(self, msg, candidates=()):
        super().__init__(msg)
        self.candidates = tuple(candidates)


class NoConsistentPlacement(GridForestError):
    """No placement check passed within tolerance for some node.

    Carries ``parent_map`` with whatever was recovered before the failure.
    """

    def __init__(self, msg, parent_map=None, events=None):
        super().__init__(msg)
        self.parent_map = dict(parent_map or {})
        self.events = list(events or [])


class AssumptionViolated(GridForestError):
    """Input violates a structural assumption of the learner."""


# -- experiment harness ---------------------------------------------------------

class InfeasibleSpec(GridForestError):
    """Feeder or experiment specification cannot be realized."""
