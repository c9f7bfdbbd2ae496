"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed arguments: wrong shapes, unequal atom counts, bad values."""


class PreconditionError(ValueError):
    """A mathematical precondition (e.g. ``lambda > M*c``) does not hold."""


class ConfigError(ValueError):
    """Configuration failed validation. ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class SimulationDivergence(RuntimeError):
    """A particle left the finite range during a simulation."""

    def __init__(self, step, max_norm):
        self.step = step
        self.max_norm = max_norm
        super().__init__(f"simulation diverged at step {step} (max particle norm {max_norm:.3g})")
