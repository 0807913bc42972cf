"""Shared numeric defaults and tolerance knobs.

Every stage reads its tolerances from a ``Tolerances`` instance so that runs
are reproducible and the CLI can override any knob from a config file.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace


@dataclass(frozen=True)
class Tolerances:
    # residual certification (radians)
    geo_residual: float = 1e-3
    ortho_residual: float = 1e-3

    # flow bookkeeping
    length_slack: float = 1e-9          # allowed uphill per recorded step
    stationary_eps: float = 1e-6        # |dL| below this counts as stationary
    strict_decrease_eps: float = 1e-8   # non-chords must beat this per step
    stall_rel: float = 1e-6             # relative decrease defining a stall
    stall_window: int = 20
    flow_budget: int = 10_000
    point_threshold_factor: float = 1e-3   # * inj_lower -> point curve

    # intersection / distinctness
    tangency_angle: float = 1e-4        # crossings flatter than this ignored
    frechet_merge: float = 5e-3         # oracle chord classes merged below this
    frechet_match: float = 1e-2         # pipeline chord <-> oracle match radius
    frechet_distinct_factor: float = 20.0  # * geo_residual -> distinctness tol

    # covering / fan
    covering_eps: float = 1e-6
    fan_shots: int = 1024
    fan_length_tol: float = 1e-3
    covering_samples: int = 512

    # discretization
    grid_resolution: int = 257
    graph_resolution: int = 129
    boundary_samples: int = 512
    integrator_step: float = 5e-3       # RK4 arclength step, metric units
    ball_radius_factor: float = 0.5     # * inj_lower
    chain_spacing_factor: float = 0.5   # * ball radius

    # sweepout / min-max
    sweepout_samples: int = 720
    f1_samples: int = 180
    f2_grid: int = 24
    bisection_budget: int = 48
    maeda_eps_factor: float = 1e-3      # * diameter

    # collar
    collar_eps_factors: tuple = (0.1, 0.05, 0.025)  # * inj_lower
    collar_levels: int = 9

    # reporting
    rel_invariant_tol: float = 0.01     # 1% for d, P, A style checks

    def scaled(self, **kw) -> "Tolerances":
        return replace(self, **kw)


DEFAULTS = Tolerances()
