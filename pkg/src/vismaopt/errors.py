"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid network/scenario configuration (bad topology, values, file)."""


class SingularCouplingError(ConfigurationError):
    """A coupling admittance of zero was supplied."""


class InstabilityError(RuntimeError):
    """The simulated system left its domain of validity (omega <= 0,
    load-bus Newton divergence / voltage collapse, step-size underflow).
    Carries enough context for the caller to reject the parameter set."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message if t is None else f"{message} (t = {t:.6f} s)")
        self.t = t


class NoSteadyStateError(RuntimeError):
    """The steady-state solver did not converge to the required residual."""


class InfeasibleStartError(RuntimeError):
    """Every tempering replica was still at rejected energy after phase 1."""
