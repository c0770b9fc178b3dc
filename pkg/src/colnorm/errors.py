"""Exception hierarchy shared by every module.

Each class carries a ``category`` used by the CLI when printing
``error: <category>: <detail>``.
"""


class ColnormError(Exception):
    category = "error"


class NumericalError(ColnormError, ArithmeticError):
    category = "numerical"


class NonFiniteError(NumericalError):
    pass


class SvdConvergenceError(NumericalError):
    pass


class RankDeficientError(NumericalError):
    pass


class ShapeError(ColnormError, ValueError):
    category = "shape"


class ConfigError(ColnormError, ValueError):
    category = "config"
