"""Exception types raised across the package."""


class DegeneratePriorError(ValueError):
    """The transformed prior covariance is singular where a switch time is needed."""


class NormalizationError(ValueError):
    """Structural parameters cannot be expressed under the requested normalization."""


class GridResolutionError(RuntimeError):
    """Extracted boundaries are not monotone beyond one grid cell."""


class GridEscalationError(RuntimeError):
    """The m-grid stayed too narrow after every m_bar escalation.

    ``attempted`` lists the half-widths that were tried.
    """

    def __init__(self, message, attempted):
        super().__init__(f"{message} (attempted m_bar: {', '.join(f'{m:.4g}' for m in attempted)})")
        self.attempted = list(attempted)


class MismatchError(ValueError):
    """A boundary solution and a prior describe different problems."""


class InfeasibleWelfareError(RuntimeError):
    """The welfare floor cannot be reached by any multiplier below the cap."""

    def __init__(self, message, feasible_range):
        lo, hi = feasible_range
        super().__init__(f"{message}; feasible welfare range is [{lo:.6g}, {hi:.6g}]")
        self.feasible_range = feasible_range


class ScenarioError(ValueError):
    """A scenario file failed to parse or validate.

    ``field`` is the dotted path of the offending entry and ``line`` the
    1-based line in the source file, when known.
    """

    def __init__(self, message, field=None, line=None, source=None):
        where = []
        if source:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field '{field}'")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.field = field
        self.line = line
