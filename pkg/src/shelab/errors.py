class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.errors))


class BlowUpError(FloatingPointError):
    """Non-finite values produced by the time stepper."""

    def __init__(self, step, t=None):
        self.step = step
        self.t = t
        where = f"step {step}" if t is None else f"step {step} (t={t:g})"
        super().__init__(f"non-finite solution values at {where}")


class Undetermined(RuntimeError):
    """A numerical oracle could not certify its result."""


class DomainViolation(ValueError):
    """Observable evaluated outside its domain."""

    def __init__(self, value, observable=""):
        self.value = value
        super().__init__(f"{observable or 'observable'} undefined at u={value!r}")
