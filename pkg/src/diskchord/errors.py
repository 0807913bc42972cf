"""Exception types shared across the pipeline."""


class DiskchordError(Exception):
    pass


class DomainError(DiskchordError):
    """Point outside the closed parameter disk."""


class DegenerateTensor(DiskchordError):
    """Metric tensor not positive definite where needed."""


class BvpError(DiskchordError):
    """Two-point geodesic solve failed to converge (ball too large)."""


class FootError(DiskchordError):
    """Orthogonal foot on the boundary is ambiguous (cover too coarse)."""


class CoverError(DiskchordError):
    """Ball cover could not be certified at the configured resolution."""


class FlowError(DiskchordError):
    """Flow step failed inside a ball (cover defect)."""


class FamilyError(DiskchordError):
    """Family operation failed for a specific member."""

    def __init__(self, index, message):
        super().__init__(f"member {index}: {message}")
        self.index = index


class MonotoneError(DiskchordError):
    """A family violated the monotonicity certificate."""


class CollarError(DiskchordError):
    """Fermi collar construction failed (focal collision or degenerate eps)."""
