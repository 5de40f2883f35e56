"""Exception hierarchy shared across the engine."""


class PitplanError(Exception):
    """Base class for all engine errors."""


class ParseError(PitplanError):
    """Instance or model file could not be parsed."""


class ValidationError(PitplanError):
    """Data violates a documented invariant (cycle, dangling id, bad mass...)."""


class InvalidArgs(PitplanError):
    """Caller passed arguments outside an operation's preconditions."""


class NumericalFailure(PitplanError):
    """Solver exceeded its iteration cap or lost numerical coherence."""


class ShapeMismatch(PitplanError):
    """Array dimensions disagree with the model or instance."""


class DivergenceError(PitplanError):
    """Training loss became non-finite; carries the trace so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class DegenerateField(PitplanError):
    """Zero-variance field where a spatial statistic is undefined."""


class InvalidBins(PitplanError):
    """Variogram lag bins are not ascending/positive."""


class InfeasibleSchedule(PitplanError):
    """Schedule violates precedence or capacity where feasibility is required."""


class LpFailure(PitplanError):
    """Stage-2 or master LP did not solve to optimality."""


class RepairStalled(PitplanError):
    """No feasible insertion exists; carries the best-effort schedule."""

    def __init__(self, message, schedule=None):
        super().__init__(message)
        self.schedule = schedule


class NoFeasibleFound(PitplanError):
    """Optimizer found no feasible schedule (fallbacks apply)."""


class LimitExceeded(PitplanError):
    """Branch-and-bound hit its node/time limit; carries the incumbent."""

    def __init__(self, message, incumbent=None):
        super().__init__(message)
        self.incumbent = incumbent


class TooFewSamples(PitplanError):
    """Statistical comparison needs more samples."""


class NonConvergence(PitplanError):
    """Latent search missed its tolerance; carries the best scenarios found."""

    def __init__(self, message, best=None, hit_rate=None):
        super().__init__(message)
        self.best = best
        self.hit_rate = hit_rate


class UnknownInstance(PitplanError):
    """Run references an instance id that is not in the store."""


class InvalidConfig(PitplanError):
    """Run configuration failed validation."""


class UnknownRun(PitplanError):
    """Run id not present in the store."""


class InvalidOverride(PitplanError):
    """What-if override is malformed (400) or the parent run is not Done (409)."""

    def __init__(self, message, http_status: int = 400):
        super().__init__(message)
        self.http_status = http_status


class IllegalTransition(PitplanError):
    """Run control command not legal in the current status."""


class MissingTrace(PitplanError):
    """Report kind requires a trace the run does not have."""
