"""Exception types shared across the package.

Refusals triggered by a violated smallness/admissibility condition carry a
short condition code (e.g. "(na)", "(z1)", "(kn)") so batch drivers can name
the failed bound; the codes are listed in the README.
"""


class TorusNFError(Exception):
    """Base class for all package-specific errors."""


class HypothesisViolation(TorusNFError):
    """An input fails an admissibility condition; the operation refuses to run.

    Attributes
    ----------
    bound : str
        Condition code of the violated bound, e.g. "(na)".
    """

    def __init__(self, bound, message):
        self.bound = bound
        super().__init__(f"hypothesis {bound} violated: {message}")


class NumericalFailure(TorusNFError):
    """A computation started but could not be completed to tolerance."""


class SchemaError(TorusNFError):
    """An input file does not match the JSON schema or its invariants.

    Attributes
    ----------
    field : str
        Dotted path of the offending field, when known.
    """

    def __init__(self, message, field=""):
        self.field = field
        super().__init__(message if not field else f"{field}: {message}")
