"""Exception and warning types shared across the package."""


class FrosttFormatError(ValueError):
    """Malformed FROSTT ``.tns`` input."""


class NumericalError(ArithmeticError):
    """A solve produced non-finite values or otherwise broke down."""


class RankDeficiencyWarning(RuntimeWarning):
    """A matrix was numerically rank deficient; a truncated solve was used."""
