"""Obstacle and inter-vehicle separation constraints for the MPC QP.

Keep-out regions are horizontal circles (cylinders cut at flight level).
The circular boundary is nonconvex as an exclusion set, so each control
step linearizes it around the previous MPC prediction: the constraint is
the supporting half-plane n'(p - c) >= r_eff with n the unit vector from
the obstacle center to the linearization point. Any point satisfying the
half-plane is at distance >= r_eff from the center, so the linearization
is an outer approximation and never admits an entry the circle would
forbid. All rows are soft: a blocked corridor degrades into penalized
slack instead of an infeasible solve.

validate_clearance is the authoritative safety check; it measures exact
Euclidean distances on realized trajectories, never the linear surrogate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError
from .mpc_core import LinearConstraint

logger = logging.getLogger(__name__)

# Below this distance a linearization point is treated as sitting on the
# obstacle center (or on its paired vehicle) and the normal is degenerate.
_DEGENERATE_DIST = 1e-9

# A predicted approach whose lateral miss distance is below this is read as
# exactly head-on; the supporting plane then only pushes straight back and
# the vehicle would stall, so the normal is swapped for a lateral one.
_HEAD_ON_MISS = 1e-6


@dataclass(frozen=True)
class CircleObstacle:
    """Horizontal keep-out disk: center (x, y), physical radius, margin.

    The constraint radius is radius + margin; tangency to it is allowed.
    """

    center: np.ndarray
    radius: float
    margin: float = 0.0

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).ravel()
        if center.size != 2 or not np.all(np.isfinite(center)):
            raise ConfigurationError(f"obstacle center must be a finite (x, y), got {self.center}")
        if not (self.radius > 0):
            raise ConfigurationError(f"obstacle radius must be positive, got {self.radius}")
        if self.margin < 0:
            raise ConfigurationError(f"obstacle margin must be nonnegative, got {self.margin}")
        object.__setattr__(self, "center", center)

    @property
    def effective_radius(self) -> float:
        return self.radius + self.margin


@dataclass(frozen=True)
class SeparationSpec:
    """Minimum pairwise horizontal distance between vehicles."""

    d_min: float

    def __post_init__(self):
        if not (self.d_min > 0):
            raise ConfigurationError(f"d_min must be positive, got {self.d_min}")


def reduce_obstacle(cylinder, margin: float = 0.0) -> CircleObstacle:
    """Flatten a vertical cylinder to its keep-out circle plus margin.

    Accepts a mapping with center/radius keys (scenario obstacle tables
    load directly) or any object carrying those attributes.
    """
    if isinstance(cylinder, CircleObstacle):
        return CircleObstacle(cylinder.center, cylinder.radius,
                              cylinder.margin + margin)
    if hasattr(cylinder, "keys"):
        center, radius = cylinder["center"], cylinder["radius"]
    else:
        center, radius = cylinder.center, cylinder.radius
    return CircleObstacle(center, float(radius), float(margin))


def _half_plane_normals(points: np.ndarray, center: np.ndarray,
                        engage_radius: float, label: str) -> np.ndarray:
    """Per-step unit normals for supporting half-planes around a circle.

    Default normal: from the center toward the linearization point. Two
    degenerate layouts are repaired deterministically:

    - point on the center: +x axis (no direction information at all);
    - exactly head-on approach while engaged with the circle: the plane
      would face straight down the path and the optimizer, seeing a
      symmetric cost, would press into it and stall, so the normal turns
      to the left of the motion direction and the plan commits to passing
      on that side.
    """
    count = points.shape[0]
    normals = np.zeros((count, 2))
    for k in range(count):
        d = points[k] - center
        dist = float(np.linalg.norm(d))
        if dist < _DEGENERATE_DIST:
            logger.warning("%s: linearization point sits on the obstacle center "
                           "at step %d; using +x normal", label, k + 1)
            normals[k] = (1.0, 0.0)
            continue
        n = d / dist

        if k > 0:
            motion = points[k] - points[k - 1]
        elif count > 1:
            motion = points[1] - points[0]
        else:
            motion = np.zeros(2)
        speed = float(np.linalg.norm(motion))
        if speed > _DEGENERATE_DIST:
            m_hat = motion / speed
            approaching = float(m_hat @ d) < 0.0
        else:
            # Stationary prediction pressed against the circle: presume the
            # blocked travel direction points at the center.
            m_hat = -n
            approaching = True
        miss = abs(m_hat[0] * d[1] - m_hat[1] * d[0])
        engaged = dist <= engage_radius + max(speed, 1e-3)
        if engaged and approaching and miss < _HEAD_ON_MISS:
            normals[k] = (-m_hat[1], m_hat[0])
            logger.debug("%s: head-on approach at step %d; passing left", label, k + 1)
        else:
            normals[k] = n
    return normals


def obstacle_constraints(predicted_positions, obstacle: CircleObstacle,
                         output_offset: int = 0) -> list[LinearConstraint]:
    """Soft half-plane rows keeping each predicted step out of a circle.

    predicted_positions is (np, 2): the previous solution's horizontal
    positions, used as linearization points. Row k constrains predicted
    step k+1: n'(p - c) >= r_eff. output_offset shifts the coefficient
    columns to a vehicle's block inside a stacked output vector.
    """
    points = np.atleast_2d(np.asarray(predicted_positions, dtype=float))
    if points.shape[1] != 2:
        raise ConfigurationError(
            f"predicted positions must be (steps, 2), got {points.shape}")
    r_eff = obstacle.effective_radius
    normals = _half_plane_normals(points, obstacle.center, r_eff, "obstacle")
    return [
        LinearConstraint(step=k + 1, coeffs=normals[k],
                         lower=r_eff + float(normals[k] @ obstacle.center),
                         soft=True, start=output_offset)
        for k in range(points.shape[0])
    ]


def pair_normals(pred_i, pred_j) -> np.ndarray:
    """Per-step unit vectors from trajectory j toward trajectory i.

    Coincident pairs fall back to the +x axis deterministically (with a
    diagnostic); used both for the fixed-neighbor rows below and for the
    coupled rows of a stacked multi-vehicle QP.
    """
    pi = np.atleast_2d(np.asarray(pred_i, dtype=float))
    pj = np.atleast_2d(np.asarray(pred_j, dtype=float))
    if pi.shape != pj.shape or pi.shape[1] != 2:
        raise ConfigurationError(
            f"separation predictions must be matching (steps, 2) arrays, "
            f"got {pi.shape} and {pj.shape}")
    normals = np.zeros_like(pi)
    for k in range(pi.shape[0]):
        d = pi[k] - pj[k]
        dist = float(np.linalg.norm(d))
        if dist < _DEGENERATE_DIST:
            logger.warning("separation: coincident linearization pair at step %d; "
                           "using +x normal", k + 1)
            normals[k] = (1.0, 0.0)
        else:
            normals[k] = d / dist
    return normals


def separation_constraints(pred_i, pred_j, spec: SeparationSpec,
                           output_offset: int = 0) -> list[LinearConstraint]:
    """Soft half-plane rows holding vehicle i off its side of a pair gap.

    Both predictions are fixed linearization data. The row for step k
    claims the half-space d_min/2 beyond the midpoint of the two previous
    plans, n'(p_i - mid) >= d_min/2 with n the unit vector from j to i.
    The swapped call hands the mirrored half-space to the other vehicle,
    and the two claims are disjoint by d_min along n, so the realized gap
    stays >= d_min even when both vehicles replan in the same sweep.
    """
    pi = np.atleast_2d(np.asarray(pred_i, dtype=float))
    pj = np.atleast_2d(np.asarray(pred_j, dtype=float))
    normals = pair_normals(pred_i, pred_j)
    mid = 0.5 * (pi + pj)
    return [
        LinearConstraint(step=k + 1, coeffs=normals[k],
                         lower=0.5 * spec.d_min + float(normals[k] @ mid[k]),
                         soft=True, start=output_offset)
        for k in range(pj.shape[0])
    ]


@dataclass(frozen=True)
class Violation:
    """One exact-distance breach at a trajectory sample."""

    kind: str            # "obstacle" or "separation"
    step: int
    index: int           # obstacle index, or the other trajectory's index
    distance: float
    limit: float


@dataclass(frozen=True)
class ClearanceReport:
    """Exact clearances of one trajectory; None where nothing applies."""

    min_obstacle_clearance: float | None
    min_pairwise_distance: float | None
    violations: tuple[Violation, ...] = field(default=())


def validate_clearance(trajectory, obstacles, spec: SeparationSpec,
                       all_trajectories=()) -> ClearanceReport:
    """Exact Euclidean safety check of a realized trajectory.

    trajectory is (T, 2) horizontal positions; all_trajectories holds the
    other vehicles' aligned (T, 2) arrays. A violation is recorded when a
    sample is strictly closer than r_eff to an obstacle center or strictly
    closer than d_min to another vehicle; tangency passes.
    """
    traj = np.atleast_2d(np.asarray(trajectory, dtype=float))
    violations: list[Violation] = []

    min_clear = None
    for idx, obs in enumerate(obstacles):
        dist = np.linalg.norm(traj - obs.center, axis=1)
        clear = dist - obs.effective_radius
        step = int(np.argmin(clear))
        if min_clear is None or clear[step] < min_clear:
            min_clear = float(clear[step])
        for k in np.flatnonzero(dist < obs.effective_radius):
            violations.append(Violation("obstacle", int(k), idx,
                                        float(dist[k]), obs.effective_radius))

    min_pair = None
    for jdx, other in enumerate(all_trajectories):
        if other is trajectory:
            continue
        other = np.atleast_2d(np.asarray(other, dtype=float))
        if other.shape != traj.shape:
            raise ConfigurationError(
                f"trajectory {jdx} has shape {other.shape}, expected {traj.shape}")
        dist = np.linalg.norm(traj - other, axis=1)
        low = float(np.min(dist))
        if min_pair is None or low < min_pair:
            min_pair = low
        for k in np.flatnonzero(dist < spec.d_min):
            violations.append(Violation("separation", int(k), jdx,
                                        float(dist[k]), spec.d_min))

    return ClearanceReport(min_obstacle_clearance=min_clear,
                           min_pairwise_distance=min_pair,
                           violations=tuple(violations))


def feasibility_guard(obstacle: CircleObstacle, v_max: float, dt: float) -> str | None:
    """Warn when one discrete step can hop clean over an obstacle.

    Constraints are only enforced at sample instants; if the keep-out
    diameter is smaller than the distance covered in a single step, the
    trajectory can cross the circle between samples without any sampled
    point violating it. Returns the warning text, or None when the sizes
    are safe.
    """
    step_dist = v_max * dt
    diameter = 2.0 * obstacle.effective_radius
    if diameter < step_dist:
        return (f"obstacle at ({obstacle.center[0]:g}, {obstacle.center[1]:g}) has "
                f"keep-out diameter {diameter:g} m, smaller than the {step_dist:g} m "
                f"covered in one step; a trajectory can skip over it between "
                f"samples. Use a smaller dt or a larger margin.")
    return None
