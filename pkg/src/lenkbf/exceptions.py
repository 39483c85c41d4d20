"""Exception types raised by the filter, simulator and config loader."""


class LEnKBFError(Exception):
    """Base class for all package errors."""


class SingularCovarianceError(LEnKBFError, ArithmeticError):
    """A diagonal entry of the sample covariance fell to or below the floor.

    This is the signature of ensemble collapse: the diagonal inverse is
    undefined and the inflation term cannot be formed.
    """

    def __init__(self, index, value, floor, step=None):
        self.index = int(index)
        self.value = float(value)
        self.floor = float(floor)
        self.step = step
        msg = (
            f"covariance diagonal [{self.index}] = {self.value:.3e} "
            f"<= floor {self.floor:.3e} (ensemble collapse)"
        )
        if step is not None:
            msg += f" at step {step}"
        super().__init__(msg)


class StiffnessError(LEnKBFError):
    """The step size does not resolve the gain/inflation rates of the filter."""

    def __init__(self, dt, rate, limit=0.5, step=None):
        self.dt = float(dt)
        self.rate = float(rate)
        self.limit = float(limit)
        self.step = step
        msg = (
            f"dt * rate = {self.dt * self.rate:.3g} exceeds {self.limit} "
            f"(dt={self.dt:g}, rate={self.rate:.3g}); reduce dt below "
            f"{self.limit / self.rate:.3g} or disable the stiffness guard"
        )
        if step is not None:
            msg += f" [step {step}]"
        super().__init__(msg)


class BlowUpError(LEnKBFError, FloatingPointError):
    """A state became non-finite during time stepping."""

    def __init__(self, step, what="state"):
        self.step = step
        super().__init__(f"non-finite {what} at step {step}")


class ConfigError(LEnKBFError, ValueError):
    """Invalid experiment configuration."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        self.message = message
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if field is not None:
            prefix += f"{field}: "
        super().__init__(prefix + message)


class StreamFormatError(LEnKBFError, ValueError):
    """An observation/trajectory file is malformed or does not match the config."""
