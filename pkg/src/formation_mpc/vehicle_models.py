"""Discrete-time linear vehicle models.

The toolkit controls translational motion only: each vehicle is a 3-D
double integrator driven by commanded acceleration, standing in for an
aircraft whose attitude dynamics are handled by an ideal inner-loop
autopilot. Attitude enters only through the derived heading used to
rotate formation offsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError


@dataclass(frozen=True)
class StateSpaceModel:
    """Discrete LTI model x+ = A x + B u, y = C x with sample time dt."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    dt: float

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        if A.shape[0] != A.shape[1]:
            raise ConfigurationError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ConfigurationError(
                f"B has {B.shape[0]} rows, expected {A.shape[0]} to match A"
            )
        if C.shape[1] != A.shape[0]:
            raise ConfigurationError(
                f"C has {C.shape[1]} columns, expected {A.shape[0]} to match A"
            )
        if not (self.dt > 0.0):
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        for name, mat in (("A", A), ("B", B), ("C", C)):
            if not np.all(np.isfinite(mat)):
                raise ConfigurationError(f"{name} contains non-finite entries")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]


# Speed below which a velocity vector carries no usable heading.
HEADING_SPEED_EPS = 1e-6


def heading_from_velocity(velocity, fallback: float = 0.0) -> float:
    """Heading (rad, about the vertical axis) of a velocity vector.

    Uses the horizontal components only. Below HEADING_SPEED_EPS the
    direction is numerically meaningless, so the previous valid heading
    is kept instead.
    """
    v = np.asarray(velocity, dtype=float)
    if math.hypot(v[0], v[1]) > HEADING_SPEED_EPS:
        return math.atan2(v[1], v[0])
    return fallback


@dataclass(frozen=True)
class VehicleState:
    """Kinematic snapshot: position [m], velocity [m/s], heading (-pi, pi]."""

    position: np.ndarray
    velocity: np.ndarray
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float))

    @classmethod
    def from_vector(cls, x, last_heading: float = 0.0) -> "VehicleState":
        """Build from a double-integrator state vector (pos, vel stacked)."""
        x = np.asarray(x, dtype=float)
        pos, vel = x[:3], x[3:6]
        return cls(pos, vel, heading_from_velocity(vel, last_heading))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])


@dataclass(frozen=True)
class ActuatorLimits:
    """Per-axis acceleration and speed limits of the inner-loop autopilot."""

    a_max: np.ndarray
    v_max: np.ndarray

    def __post_init__(self):
        a = np.broadcast_to(np.asarray(self.a_max, dtype=float), (3,)).copy()
        v = np.broadcast_to(np.asarray(self.v_max, dtype=float), (3,)).copy()
        object.__setattr__(self, "a_max", a)
        object.__setattr__(self, "v_max", v)
        if not np.all(a > 0):
            raise ConfigurationError(f"a_max must be strictly positive, got {a}")
        if not np.all(v > 0):
            raise ConfigurationError(f"v_max must be strictly positive, got {v}")


def double_integrator_3d(dt: float) -> StateSpaceModel:
    """3-D point-mass model: state (px, py, pz, vx, vy, vz), input acceleration.

    Exact zero-order-hold discretization of p'' = a:
        p+ = p + dt v + dt^2/2 a
        v+ = v + dt a
    The output selects position.
    """
    if not (dt > 0.0):
        raise ConfigurationError(f"dt must be positive, got {dt}")
    I3 = np.eye(3)
    Z3 = np.zeros((3, 3))
    A = np.block([[I3, dt * I3], [Z3, I3]])
    B = np.vstack([0.5 * dt * dt * I3, dt * I3])
    C = np.hstack([I3, Z3])
    return StateSpaceModel(A, B, C, dt)


def step(model: StateSpaceModel, x, u) -> np.ndarray:
    """One discrete step: A x + B u."""
    return model.A @ np.asarray(x, dtype=float) + model.B @ np.asarray(u, dtype=float)


def output(model: StateSpaceModel, x) -> np.ndarray:
    """Measured output C x."""
    return model.C @ np.asarray(x, dtype=float)
