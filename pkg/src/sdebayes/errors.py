"""Exception hierarchy.

Numeric failures inside estimators are normally mapped to -inf log-weights
rather than raised; the exceptions below are for direct API misuse or
unrecoverable states (CLI exit codes: config 2, numeric 3, I/O 4).
"""


class SdeBayesError(Exception):
    """Base class for all package errors."""


class ConfigError(SdeBayesError):
    """Invalid experiment configuration or arguments."""


class NumericError(SdeBayesError):
    """Base class for numerical failures."""


class NonFiniteDrift(NumericError):
    """Drift or diffusion evaluated to a non-finite value."""


class NonFiniteJacobian(NumericError):
    """Drift Jacobian evaluated to a non-finite value."""


class NotPSD(NumericError):
    """Diffusion matrix failed the symmetric positive-semidefinite check."""


class SingularCovariance(NumericError):
    """Covariance not invertible after the additive-jitter ladder."""


class SingularInnovation(SingularCovariance):
    """Observation-projected innovation matrix of the noisy bridge is singular."""


class DomainExit(NumericError):
    """A simulated step left the state domain under the 'reject' policy."""


class DegenerateWeights(NumericError):
    """All particle weights are zero; upstream estimate is -inf."""


class StepFailure(NumericError):
    """ODE integration produced non-finite intermediate values."""


class InitFailure(NumericError):
    """Sampler initialisation failed after bounded retries."""


class TuningFailure(NumericError):
    """Particle-count search exhausted max_N without meeting the target."""


class ArchiveError(SdeBayesError):
    """Chain archive is missing files or fails to parse."""
