"""Exception hierarchy shared by all trajkit modules.

Every error raised on a documented failure path derives from
:class:`TrajkitError`, so callers (and the CLI) can catch one base class and
report the concrete error name.
"""


class TrajkitError(Exception):
    """Base class for all trajkit errors."""


# --- scenario parsing / construction ---------------------------------------

class MalformedInput(TrajkitError):
    """Input stream could not be parsed in the declared format."""


class NoTargetAgent(TrajkitError):
    """Scenario does not contain exactly one target agent."""


class InsufficientFrames(TrajkitError):
    """Target track is shorter than the observation horizon."""


class TooShort(TrajkitError):
    """Sequence too short for the requested operation."""


# --- kinematics --------------------------------------------------------------

class DegenerateDesign(TrajkitError):
    """Least-squares design matrix is rank deficient."""


class EmptySequence(TrajkitError):
    """Operation requires a non-empty sequence."""


class LambdaOutOfRange(TrajkitError):
    """Forgetting factor must lie strictly inside (0, 1)."""


class NegativeHorizon(TrajkitError):
    """Travelled-distance horizon must be non-negative."""


# --- map prior ---------------------------------------------------------------

class NoLaneInRange(TrajkitError):
    """No lane close enough to the agent's last observation."""


class NoValidCenterline(TrajkitError):
    """Prior has no valid centerline to sample around."""


# --- tensor / model ----------------------------------------------------------

class ShapeMismatch(TrajkitError):
    """Operands have incompatible shapes."""


class IndivisibleHeads(TrajkitError):
    """Feature dimension is not divisible by the head count."""


class SliceMismatch(TrajkitError):
    """Scene slices do not partition the node rows."""


class NotScalar(TrajkitError):
    """backward() requires a scalar loss tensor."""


class MissingPrior(TrajkitError):
    """Map variant forward pass called without a centerline prior."""


class NonFiniteLoss(TrajkitError):
    """Training loss became NaN or infinite."""


class EmptySet(TrajkitError):
    """Statistic requested over an empty collection."""
