"""Exception hierarchy shared by the estimators, simulators and CLI."""


class RMBanditError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(RMBanditError, ValueError):
    """Input arrays are empty, mis-shaped or non-finite."""


class InvalidTrim(RMBanditError, ValueError):
    """Trim fraction is out of range or would discard every sample."""


class InvalidConfig(RMBanditError, ValueError):
    """A configuration value violates its documented constraints."""


class SingularDesign(RMBanditError, ValueError):
    """The normal matrix of a least-squares problem is (numerically) singular.

    ``instance_id`` is filled in when the failure happens inside a multitask fit.
    """

    def __init__(self, message, min_eigenvalue=None, instance_id=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue
        self.instance_id = instance_id


class ConvergenceFailure(RMBanditError, RuntimeError):
    """Iterative solver stopped at its iteration cap without converging."""

    def __init__(self, message, kkt_residual, iterations, beta=None):
        super().__init__(message)
        self.kkt_residual = kkt_residual
        self.iterations = iterations
        self.beta = beta
