"""Formation-flight MPC toolkit.

Constrained linear MPC with a receding horizon, leader-follower and
virtual-structure formation references, linearized collision and obstacle
avoidance, and a batch scenario simulator with CSV/JSON/SVG outputs.
"""

from .avoidance import (CircleObstacle, ClearanceReport, SeparationSpec,
                        Violation, feasibility_guard, obstacle_constraints,
                        reduce_obstacle, separation_constraints,
                        validate_clearance)
from .exceptions import ConfigurationError
from .formation import (FormationGeometry, FormationMode, ReferencePath,
                        build_references, formation_error, slot_reference,
                        virtual_point)
from .mpc_core import (Controller, ControllerState, LinearConstraint,
                       MpcConfig, PredictionMatrices, QpProblem,
                       SolveDiagnostics, build_prediction, build_qp,
                       evaluate_cost, mpc_step, riccati_terminal_weight,
                       solve_qp)
from .sim_harness import (Metrics, Scenario, TrajectoryLog, compute_metrics,
                          inner_loop, load_scenario, read_trajectory_csv,
                          run_scenario, scenario_findings,
                          write_trajectory_csv)
from .vehicle_models import (ActuatorLimits, StateSpaceModel, VehicleState,
                             double_integrator_3d, heading_from_velocity,
                             output, step)

__version__ = "0.1.0"

__all__ = [
    "ActuatorLimits",
    "CircleObstacle",
    "ClearanceReport",
    "ConfigurationError",
    "Controller",
    "ControllerState",
    "FormationGeometry",
    "FormationMode",
    "LinearConstraint",
    "Metrics",
    "MpcConfig",
    "PredictionMatrices",
    "QpProblem",
    "ReferencePath",
    "Scenario",
    "SeparationSpec",
    "SolveDiagnostics",
    "StateSpaceModel",
    "TrajectoryLog",
    "VehicleState",
    "Violation",
    "build_prediction",
    "build_qp",
    "build_references",
    "compute_metrics",
    "double_integrator_3d",
    "evaluate_cost",
    "feasibility_guard",
    "formation_error",
    "heading_from_velocity",
    "inner_loop",
    "load_scenario",
    "mpc_step",
    "obstacle_constraints",
    "output",
    "read_trajectory_csv",
    "reduce_obstacle",
    "riccati_terminal_weight",
    "run_scenario",
    "scenario_findings",
    "separation_constraints",
    "slot_reference",
    "solve_qp",
    "step",
    "validate_clearance",
    "virtual_point",
    "write_trajectory_csv",
]
