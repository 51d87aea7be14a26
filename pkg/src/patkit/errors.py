"""Exception types shared across the toolkit."""


class ConfigurationError(ValueError):
    """Invalid grid, medium, boundary, or experiment configuration."""


class NumericalBlowupError(RuntimeError):
    """Time stepping produced non-finite or unbounded values."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"solution blew up at step {step}")


class ConvergenceError(RuntimeError):
    """An iterative linear solve failed to reach its residual target."""

    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"iteration stalled at relative residual {residual:.3e} "
            f"after {iterations} iterations"
        )


class NonContractionError(RuntimeError):
    """Neumann-series increments grew; visibility or observation time is off."""

    def __init__(self, increments):
        self.increments = list(increments)
        super().__init__(
            "series increments grew for three consecutive terms: "
            + ", ".join(f"{v:.4e}" for v in self.increments[-4:])
        )
