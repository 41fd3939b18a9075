"""Exception hierarchy. Every error carries a stable ``code`` string."""


class SphereFlowError(Exception):
    code = "ERROR"


class NonpositiveFactorError(SphereFlowError):
    """A conformal factor has a non-positive value at some node."""

    code = "NONPOSITIVE_FACTOR"


class NonpositiveFMassError(SphereFlowError):
    """The weighted mass of f under the metric is not positive."""

    code = "NONPOSITIVE_F_MASS"


class NonpositiveMeanError(SphereFlowError):
    code = "NONPOSITIVE_MEAN"


class RootNotBracketedError(SphereFlowError):
    code = "ROOT_NOT_BRACKETED"


class UndefinedQError(SphereFlowError):
    code = "UNDEFINED_Q"


class IndexOutOfRangeError(SphereFlowError):
    code = "INDEX_OUT_OF_RANGE"


class NumericalFault(SphereFlowError):
    """Step control gave up: the integration cannot continue reliably."""

    code = "NUMERICAL_FAULT"


class ConfigError(SphereFlowError):
    code = "CONFIG"
