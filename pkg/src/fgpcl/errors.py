"""Exception types shared across the toolkit."""


class FgpclError(Exception):
    pass


class ContractError(FgpclError, ValueError):
    """An input violates a documented precondition (shape, norm, range)."""


class ScheduleError(FgpclError, ValueError):
    """Invalid phase schedule parameters."""


class ContaminationError(FgpclError, ValueError):
    """Exemplar store holds a class that belongs to the current new-class group."""


class BudgetError(FgpclError, ValueError):
    """Exemplar budget cannot be satisfied."""


class ConfigError(FgpclError, ValueError):
    """Experiment configuration does not validate."""


class MetricError(FgpclError, ValueError):
    """Metric requested on malformed or insufficient data."""
