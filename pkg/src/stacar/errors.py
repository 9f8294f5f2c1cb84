"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed input file or argument (bad CSV row, unknown label, ...)."""


class SpecificationError(ValueError):
    """Model specification violates a structural rule."""


class EmptyStratumError(ValueError):
    """An age stratum has zero total population, so its rate is undefined."""


class ImpossibleCellError(ValueError):
    """A cell has a positive count but zero expected value."""


class NotPositiveDefiniteError(ValueError):
    """A matrix required to be positive definite failed to factorize."""
