"""Formation geometry and per-vehicle reference generation.

Two architectures are supported. In leader-follower mode the first vehicle
tracks the reference path and the others hold slots fixed in the leader's
heading frame, predicting the leader forward along its current velocity.
In virtual-structure mode no vehicle leads: everyone, slot 0 included,
tracks an offset from a computed moving point on the path.

Slots are body-frame offsets rotated about the vertical axis only; the
formation lives in a horizontal plane and altitude offsets pass through
unrotated.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError
from .vehicle_models import VehicleState, heading_from_velocity


class FormationMode(enum.Enum):
    LEADER_FOLLOWER = "leader_follower"
    VIRTUAL_STRUCTURE = "virtual_structure"


@dataclass(frozen=True)
class FormationGeometry:
    """Body-frame slot offsets, one per vehicle; slot 0 is the anchor.

    Slot 0 must be the zero vector (the leader or virtual point occupies
    it). Pairwise slot spacing against a separation minimum is checked at
    scenario load, where d_min is known.
    """

    slots: np.ndarray

    def __post_init__(self):
        slots = np.asarray(self.slots, dtype=float)
        if slots.ndim != 2 or slots.shape[1] != 3 or slots.shape[0] < 1:
            raise ConfigurationError(
                f"slots must be a list of 3-vectors, got shape {slots.shape}")
        if not np.all(np.isfinite(slots)):
            raise ConfigurationError("slots contain non-finite entries")
        if np.any(slots[0] != 0.0):
            raise ConfigurationError(f"slot 0 must be the zero vector, got {slots[0]}")
        object.__setattr__(self, "slots", slots)

    @property
    def count(self) -> int:
        return self.slots.shape[0]

    def min_slot_distance(self) -> float:
        """Smallest pairwise slot spacing; inf for a single slot."""
        best = math.inf
        for i in range(self.count):
            for j in range(i + 1, self.count):
                best = min(best, float(np.linalg.norm(self.slots[i] - self.slots[j])))
        return best

    @classmethod
    def triangle(cls, spread: float = 5.0) -> "FormationGeometry":
        """Default three-ship wedge: anchor ahead, two trailing slots."""
        return cls(np.array([[0.0, 0.0, 0.0],
                             [-spread, spread, 0.0],
                             [-spread, -spread, 0.0]]))


@dataclass(frozen=True)
class ReferencePath:
    """Piecewise-linear path through timed waypoints.

    positions is (T, 3); times strictly increasing. speeds, when given,
    override the per-segment finite-difference speed used for the velocity
    reference (direction still follows the segment).
    """

    times: np.ndarray
    positions: np.ndarray
    speeds: np.ndarray | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if times.size == 0:
            raise ConfigurationError("path needs at least one waypoint")
        if positions.shape != (times.size, 3):
            raise ConfigurationError(
                f"positions must be ({times.size}, 3) to match times, "
                f"got {positions.shape}")
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(positions)):
            raise ConfigurationError("path contains non-finite entries")
        if np.any(np.diff(times) <= 0):
            raise ConfigurationError("path times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", positions)
        if self.speeds is not None:
            speeds = np.asarray(self.speeds, dtype=float).ravel()
            if speeds.size != times.size:
                raise ConfigurationError(
                    f"speeds has length {speeds.size}, expected {times.size}")
            object.__setattr__(self, "speeds", speeds)

    @classmethod
    def from_waypoints(cls, waypoints, speed: float) -> "ReferencePath":
        """Time the waypoints by arc length at a constant speed from t=0."""
        pts = np.atleast_2d(np.asarray(waypoints, dtype=float))
        if not (speed > 0):
            raise ConfigurationError(f"speed must be positive, got {speed}")
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if pts.shape[0] > 1 and np.any(seg == 0):
            raise ConfigurationError("consecutive waypoints must be distinct")
        times = np.concatenate([[0.0], np.cumsum(seg / speed)])
        return cls(times=times, positions=pts)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])


def _segment_heading(path: ReferencePath, index: int) -> float:
    delta = path.positions[index + 1] - path.positions[index]
    return heading_from_velocity(delta, 0.0)


def virtual_point(path: ReferencePath, t: float) -> VehicleState:
    """Moving reference on the path at time t.

    Piecewise-linear position; velocity from the active segment's finite
    difference (or its declared speed). Outside the time span the point
    holds the nearest endpoint with zero velocity but keeps the adjacent
    segment's heading, so formation offsets do not snap when the path ends.
    """
    times, positions = path.times, path.positions
    if times.size == 1:
        return VehicleState(positions[0], np.zeros(3), 0.0)
    if t <= times[0]:
        return VehicleState(positions[0], np.zeros(3), _segment_heading(path, 0))
    if t >= times[-1]:
        return VehicleState(positions[-1], np.zeros(3),
                            _segment_heading(path, times.size - 2))

    i = int(np.searchsorted(times, t, side="right") - 1)
    span = times[i + 1] - times[i]
    alpha = (t - times[i]) / span
    position = (1.0 - alpha) * positions[i] + alpha * positions[i + 1]
    velocity = (positions[i + 1] - positions[i]) / span
    if path.speeds is not None:
        norm = np.linalg.norm(velocity)
        if norm > 0:
            velocity = velocity / norm * path.speeds[i]
    heading = heading_from_velocity(velocity, _segment_heading(path, i))
    return VehicleState(position, velocity, heading)


def yaw_rotation(heading: float) -> np.ndarray:
    """Rotation about the vertical axis by the given heading."""
    c, s = math.cos(heading), math.sin(heading)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def slot_reference(anchor: VehicleState, offset) -> VehicleState:
    """World-frame reference for a slot offset carried by an anchor state.

    The offset rotates with the anchor heading; the slot inherits the
    anchor's velocity and heading (rigid formation, no relative motion).
    """
    offset = np.asarray(offset, dtype=float)
    position = anchor.position + yaw_rotation(anchor.heading) @ offset
    return VehicleState(position, anchor.velocity.copy(), anchor.heading)


def build_references(mode: FormationMode, geometry: FormationGeometry,
                     path: ReferencePath, t: float, horizon: int, dt: float,
                     leader_state: VehicleState | None = None) -> np.ndarray:
    """Stacked per-vehicle state references over the horizon.

    Returns shape (vehicles, horizon, 6): rows k = 0..horizon-1 hold the
    desired (position, velocity) at time t + (k+1) dt, matching the
    predicted states x_{t+1}..x_{t+horizon} of the controller.

    leader_follower mode anchors followers to the measured leader state
    propagated along its current velocity (the leader itself tracks the
    path); virtual_structure anchors every slot to the path's moving point.
    """
    if horizon < 1:
        raise ConfigurationError(f"horizon must be positive, got {horizon}")
    if mode is FormationMode.LEADER_FOLLOWER and leader_state is None:
        raise ConfigurationError("leader_follower mode needs the leader state")

    refs = np.zeros((geometry.count, horizon, 6))
    for k in range(1, horizon + 1):
        tk = t + k * dt
        moving = virtual_point(path, tk)
        for v in range(geometry.count):
            if mode is FormationMode.VIRTUAL_STRUCTURE:
                anchor = moving
            elif v == 0:
                anchor = moving
            else:
                anchor = VehicleState(
                    leader_state.position + k * dt * leader_state.velocity,
                    leader_state.velocity, leader_state.heading)
            ref = slot_reference(anchor, geometry.slots[v])
            refs[v, k - 1] = ref.as_vector()
    return refs


def formation_error(states, mode: FormationMode, geometry: FormationGeometry,
                    anchor: VehicleState) -> tuple[np.ndarray, float]:
    """Distance of each vehicle from its slot, plus the RMS over vehicles.

    The anchor fixes where the slots sit (leader state or virtual point);
    the mode only selects which anchor the caller passes, the arithmetic
    is identical.
    """
    if len(states) != geometry.count:
        raise ConfigurationError(
            f"got {len(states)} vehicle states for {geometry.count} slots")
    errors = np.zeros(geometry.count)
    for v, state in enumerate(states):
        ref = slot_reference(anchor, geometry.slots[v])
        errors[v] = float(np.linalg.norm(state.position - ref.position))
    rms = float(np.sqrt(np.mean(errors ** 2)))
    return errors, rms
