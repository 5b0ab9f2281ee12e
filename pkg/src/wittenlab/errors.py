"""Exception hierarchy shared by all modules."""


class WittenLabError(Exception):
    """Base class for every error raised by the package."""


# manifold
class DegenerateCritical(WittenLabError):
    pass


class ScanTooCoarse(WittenLabError):
    pass


# oscillator
class DegreeMismatch(WittenLabError):
    pass


# forms
class TopDegree(WittenLabError):
    pass


class BottomDegree(WittenLabError):
    pass


class ShapeMismatch(WittenLabError):
    pass


class NonClosedForm(WittenLabError):
    pass


# spectra
class NoConvergence(WittenLabError):
    def __init__(self, iterations, worst_residual):
        self.iterations = iterations
        self.worst_residual = worst_residual
        super().__init__(
            f"eigensolver did not converge after {iterations} iterations "
            f"(worst residual {worst_residual:.3e})"
        )


class GapNotOpen(WittenLabError):
    pass


class ClusterCardinalityChanged(WittenLabError):
    pass


# morse
class NoCapture(WittenLabError):
    def __init__(self, max_time):
        self.max_time = max_time
        super().__init__(f"trajectory not captured by a critical point within time {max_time}")


class NonTransversal(WittenLabError):
    pass


# whs
class CellNotConverged(WittenLabError):
    pass


class SupportOverlap(WittenLabError):
    pass


class SingularGram(WittenLabError):
    pass


# cli
class ConfigError(WittenLabError):
    pass


class ComputeError(WittenLabError):
    pass


class IoError(WittenLabError):
    pass
