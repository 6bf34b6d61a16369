"""Exception hierarchy shared by all cnnlab modules."""


class CnnlabError(Exception):
    """Base class for every error raised by this package."""


class ModelError(CnnlabError):
    """Invalid network description (syntax, unknown fields, bad extents)."""


class ShapeError(CnnlabError):
    """Tensor or weight dimensions inconsistent with a layer contract."""


class ProfileError(CnnlabError):
    """Invalid or incomplete device profile."""


class ScheduleError(CnnlabError):
    """Invalid schedule, infeasible constraint, or unsupported mapping."""


class WeightsError(CnnlabError):
    """Malformed weights container or blob/layer mismatch."""
