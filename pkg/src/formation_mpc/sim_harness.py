"""Closed-loop scenario engine.

Loads declarative scenario files, runs the receding-horizon loop over all
vehicles (one stacked QP in centralized mode, one QP per vehicle in
decentralized mode), propagates the plant through an idealized inner-loop
autopilot, and produces a trajectory log plus aggregate metrics.

Scenario files are TOML with fixed sections [vehicles], [mpc], [formation],
[path], [[obstacles]], [sim]; all units SI; unknown keys are errors.

Trajectory logs export to CSV with one row per (step, vehicle). The file
starts with one `# obstacle: cx cy r_eff` comment line per obstacle (so
plots can be regenerated from the CSV alone), then the fixed header
CSV_HEADER. Floats are written with 17 significant digits, which
round-trips IEEE doubles exactly; the two clearance columns are empty when
nothing applies (no obstacles / single vehicle).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

try:
    import tomllib
except ModuleNotFoundError:                      # Python < 3.11
    import tomli as tomllib

from .avoidance import (CircleObstacle, SeparationSpec, obstacle_constraints,
                        pair_normals, separation_constraints,
                        validate_clearance, feasibility_guard)
from .exceptions import ConfigurationError
from .formation import (FormationGeometry, FormationMode, ReferencePath,
                        build_references, slot_reference, virtual_point)
from .mpc_core import (Controller, LinearConstraint, MpcConfig,
                       riccati_terminal_weight)
from .vehicle_models import (ActuatorLimits, StateSpaceModel, VehicleState,
                             double_integrator_3d)


# --------------------------------------------------------------------------
# Scenario definition and loading

CONTROL_MODES = ("centralized", "decentralized")


@dataclass(frozen=True)
class Scenario:
    """Validated simulation input: fleet, controller, formation, world."""

    initial_states: tuple[VehicleState, ...]
    limits: ActuatorLimits
    dt: float
    mpc: MpcConfig
    formation_mode: FormationMode
    geometry: FormationGeometry
    path: ReferencePath
    obstacles: tuple[CircleObstacle, ...]
    separation: SeparationSpec
    duration: float
    control_mode: str = "centralized"
    seed: int = 0

    def __post_init__(self):
        if not (self.duration > 0):
            raise ConfigurationError(f"sim.duration must be positive, got {self.duration}")
        if self.control_mode not in CONTROL_MODES:
            raise ConfigurationError(
                f"sim.mode must be one of {CONTROL_MODES}, got {self.control_mode!r}")
        count = len(self.initial_states)
        if count != self.geometry.count:
            raise ConfigurationError(
                f"vehicles.positions lists {count} vehicles but formation.offsets "
                f"defines {self.geometry.count} slots")
        d_min = self.separation.d_min
        if self.geometry.count > 1 and self.geometry.min_slot_distance() < d_min:
            raise ConfigurationError(
                f"formation.offsets: slot spacing {self.geometry.min_slot_distance():g} m "
                f"is below formation.d_min = {d_min:g} m")
        for i in range(count):
            for j in range(i + 1, count):
                gap = float(np.linalg.norm(self.initial_states[i].position[:2]
                                           - self.initial_states[j].position[:2]))
                if gap < d_min:
                    raise ConfigurationError(
                        f"vehicles.positions: vehicles {i} and {j} start {gap:g} m "
                        f"apart, below formation.d_min = {d_min:g} m")

    @property
    def vehicle_count(self) -> int:
        return len(self.initial_states)

    def model(self) -> StateSpaceModel:
        return double_integrator_3d(self.dt)


_SECTION_KEYS = {
    "vehicles": {"count", "positions", "velocities", "a_max", "v_max"},
    "mpc": {"np", "nu", "nc", "q", "r", "p", "y_min", "y_max",
            "solver_tol", "solver_max_iter", "slack_penalty"},
    "formation": {"mode", "offsets", "d_min"},
    "path": {"waypoints", "times", "speed"},
    "obstacles": {"center", "radius", "margin"},
    "sim": {"dt", "duration", "mode", "seed"},
}
_REQUIRED_SECTIONS = ("vehicles", "mpc", "formation", "path", "sim")


def _check_keys(section: str, table: dict, index: int | None = None):
    where = section if index is None else f"{section}[{index}]"
    for key in table:
        if key not in _SECTION_KEYS[section]:
            raise ConfigurationError(f"{where}.{key}: unknown key")


def _require(table: dict, section: str, key: str):
    if key not in table:
        raise ConfigurationError(f"{section}.{key}: missing required key")
    return table[key]


def _build_scenario(data: dict) -> Scenario:
    for section in data:
        if section not in _SECTION_KEYS:
            raise ConfigurationError(f"{section}: unknown section")
    for section in _REQUIRED_SECTIONS:
        if section not in data:
            raise ConfigurationError(f"{section}: missing required section")

    veh = data["vehicles"]
    _check_keys("vehicles", veh)
    positions = np.atleast_2d(np.asarray(_require(veh, "vehicles", "positions"), dtype=float))
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise ConfigurationError(
            f"vehicles.positions: expected a list of [x, y, z], got shape {positions.shape}")
    count = veh.get("count", positions.shape[0])
    if count != positions.shape[0]:
        raise ConfigurationError(
            f"vehicles.count = {count} but vehicles.positions lists {positions.shape[0]}")
    velocities = np.zeros_like(positions)
    if "velocities" in veh:
        velocities = np.atleast_2d(np.asarray(veh["velocities"], dtype=float))
        if velocities.shape != positions.shape:
            raise ConfigurationError(
                f"vehicles.velocities: shape {velocities.shape} does not match "
                f"positions {positions.shape}")
    limits = ActuatorLimits(a_max=_require(veh, "vehicles", "a_max"),
                            v_max=_require(veh, "vehicles", "v_max"))
    states = tuple(VehicleState.from_vector(np.concatenate([positions[i], velocities[i]]))
                   for i in range(positions.shape[0]))

    form = data["formation"]
    _check_keys("formation", form)
    mode_name = _require(form, "formation", "mode")
    try:
        formation_mode = FormationMode(mode_name)
    except ValueError:
        raise ConfigurationError(
            f"formation.mode: {mode_name!r} is not one of "
            f"{[m.value for m in FormationMode]}") from None
    geometry = FormationGeometry(np.asarray(_require(form, "formation", "offsets"),
                                            dtype=float))
    separation = SeparationSpec(float(_require(form, "formation", "d_min")))

    pth = data["path"]
    _check_keys("path", pth)
    waypoints = _require(pth, "path", "waypoints")
    if "times" in pth and "speed" in pth:
        raise ConfigurationError("path.speed: give either path.times or path.speed, not both")
    if "times" in pth:
        path = ReferencePath(times=np.asarray(pth["times"], dtype=float),
                             positions=np.asarray(waypoints, dtype=float))
    elif "speed" in pth:
        path = ReferencePath.from_waypoints(waypoints, float(pth["speed"]))
    else:
        raise ConfigurationError("path.times: timed waypoints need path.times or path.speed")

    sim = data["sim"]
    _check_keys("sim", sim)
    dt = float(_require(sim, "sim", "dt"))
    duration = float(_require(sim, "sim", "duration"))
    control_mode = sim.get("mode", "centralized")
    seed = int(sim.get("seed", 0))
    model = double_integrator_3d(dt)

    mpc = data["mpc"]
    _check_keys("mpc", mpc)
    kwargs = dict(
        np=_require(mpc, "mpc", "np"),
        nu=_require(mpc, "mpc", "nu"),
        nc=_require(mpc, "mpc", "nc"),
        Q=_weight_arg("mpc.q", _require(mpc, "mpc", "q"), 6),
        R=_weight_arg("mpc.r", _require(mpc, "mpc", "r"), 3),
        u_min=-limits.a_max,
        u_max=limits.a_max,
    )
    for toml_key, field_name in (("y_min", "y_min"), ("y_max", "y_max"),
                                 ("solver_tol", "solver_tol"),
                                 ("solver_max_iter", "solver_max_iter"),
                                 ("slack_penalty", "slack_penalty")):
        if toml_key in mpc:
            kwargs[field_name] = mpc[toml_key]
    try:
        config = MpcConfig(**kwargs)
        if "p" in mpc:
            p = mpc["p"]
            if p == "riccati":
                P = riccati_terminal_weight(model.A, model.B, config.Q, config.R)
            elif isinstance(p, str):
                raise ConfigurationError(
                    f"mpc.p: {p!r} is not a weight or the string 'riccati'")
            else:
                P = _weight_arg("mpc.p", p, 6)
            config = dataclasses.replace(config, P=P)
    except ConfigurationError as exc:
        if str(exc).startswith("mpc."):
            raise
        raise ConfigurationError(f"mpc: {exc}") from None

    obstacles = []
    for idx, table in enumerate(data.get("obstacles", [])):
        _check_keys("obstacles", table, idx)
        try:
            obstacles.append(CircleObstacle(
                center=_require(table, f"obstacles[{idx}]", "center"),
                radius=float(_require(table, f"obstacles[{idx}]", "radius")),
                margin=float(table.get("margin", 0.0))))
        except ConfigurationError as exc:
            raise ConfigurationError(f"obstacles[{idx}]: {exc}") from None

    return Scenario(initial_states=states, limits=limits, dt=dt, mpc=config,
                    formation_mode=formation_mode, geometry=geometry, path=path,
                    obstacles=tuple(obstacles), separation=separation,
                    duration=duration, control_mode=control_mode, seed=seed)


def _weight_arg(name: str, value, size: int):
    """Scenario weights: scalar or diagonal list, expanded to a matrix."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(size)
    if arr.ndim == 1 and arr.size == size:
        return np.diag(arr)
    raise ConfigurationError(
        f"{name}: expected a scalar or a {size}-entry diagonal, got shape {arr.shape}")


def load_scenario(source) -> Scenario:
    """Load and validate a scenario from a TOML path or a parsed dict.

    Raises ConfigurationError naming the offending section.key; missing
    files surface as the usual OSError.
    """
    if isinstance(source, dict):
        return _build_scenario(source)
    with open(source, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{source}: not valid TOML: {exc}") from None
    return _build_scenario(data)


def scenario_findings(source) -> tuple[list[str], list[str]]:
    """(errors, warnings) for a scenario file or dict, without running it.

    Errors are invariant breaches that prevent simulation; warnings are the
    per-obstacle one-step-skip guard plus starts already inside a keep-out.
    """
    try:
        scenario = load_scenario(source)
    except ConfigurationError as exc:
        return [str(exc)], []

    warnings = []
    v_max_horizontal = float(max(scenario.limits.v_max[0], scenario.limits.v_max[1]))
    for obs in scenario.obstacles:
        note = feasibility_guard(obs, v_max_horizontal, scenario.dt)
        if note is not None:
            warnings.append(note)
        for i, state in enumerate(scenario.initial_states):
            dist = float(np.linalg.norm(state.position[:2] - obs.center))
            if dist < obs.effective_radius:
                warnings.append(
                    f"vehicle {i} starts {dist:g} m from the obstacle at "
                    f"({obs.center[0]:g}, {obs.center[1]:g}), inside its "
                    f"{obs.effective_radius:g} m keep-out; expect violations "
                    f"while it escapes")
    return [], warnings


# --------------------------------------------------------------------------
# Closed loop


def inner_loop(command_accel, limits: ActuatorLimits) -> np.ndarray:
    """Ideal autopilot: track the commanded acceleration, saturated per axis."""
    cmd = np.asarray(command_accel, dtype=float)
    return np.clip(cmd, -limits.a_max, limits.a_max)


def _seed_prediction(state: VehicleState, horizon: int, dt: float) -> np.ndarray:
    """Constant-velocity linearization trajectory for the very first solve."""
    steps = np.arange(1, horizon + 1)[:, None] * dt
    return state.position[None, :2] + steps * state.velocity[None, :2]


def _stacked_system(scenario: Scenario) -> tuple[StateSpaceModel, MpcConfig]:
    """Block-diagonal fleet model and config for the centralized solve.

    Vehicles couple only through separation rows added per step; dynamics,
    weights, and bounds replicate per vehicle.
    """
    count = scenario.vehicle_count
    model = scenario.model()
    cfg = scenario.mpc
    stacked_model = StateSpaceModel(
        A=block_diag(*[model.A] * count),
        B=block_diag(*[model.B] * count),
        C=block_diag(*[model.C] * count),
        dt=model.dt)
    stacked_cfg = MpcConfig(
        np=cfg.np, nu=cfg.nu, nc=cfg.nc,
        Q=block_diag(*[cfg.Q] * count),
        R=block_diag(*[cfg.R] * count),
        P=block_diag(*[cfg.P] * count),
        K=block_diag(*[cfg.K] * count),
        u_min=np.tile(cfg.u_min, count),
        u_max=np.tile(cfg.u_max, count),
        y_min=None if cfg.y_min is None else np.tile(cfg.y_min, count),
        y_max=None if cfg.y_max is None else np.tile(cfg.y_max, count),
        solver_tol=cfg.solver_tol,
        solver_max_iter=cfg.solver_max_iter,
        slack_penalty=cfg.slack_penalty)
    return stacked_model, stacked_cfg


@dataclass
class TrajectoryLog:
    """Time-indexed record of one run; S time rows, V vehicles.

    The last row holds the final state and the input the controller would
    apply there (solved but not propagated), so every row pairs a state
    with a control decision. min_pairwise / min_clearance are NaN where
    nothing applies. predicted_next is the controller's one-step-ahead
    state prediction per row; it is diagnostic only and not serialized.
    """

    times: np.ndarray            # (S,)
    states: np.ndarray           # (S, V, 6)
    inputs: np.ndarray           # (S, V, 3)
    references: np.ndarray       # (S, V, 6) slot reference at the row's time
    iterations: np.ndarray       # (S, V) int
    residuals: np.ndarray        # (S, V)
    converged: np.ndarray        # (S, V) bool
    formation_errors: np.ndarray  # (S, V)
    min_pairwise: np.ndarray     # (S, V)
    min_clearance: np.ndarray    # (S, V)
    obstacle_circles: tuple      # ((cx, cy, r_eff), ...)
    predicted_next: np.ndarray | None = None   # (S, V, 6)

    @property
    def steps(self) -> int:
        return self.times.shape[0]

    @property
    def vehicles(self) -> int:
        return self.states.shape[1]


def run_scenario(scenario: Scenario) -> tuple[TrajectoryLog, "Metrics"]:
    """Simulate a scenario to completion and aggregate its metrics.

    Per step: generate formation references, linearize avoidance around the
    previous predictions, solve (stacked or per-vehicle), push the first
    inputs through the inner loop, log, propagate. Deterministic: no noise
    is injected (the seed field is reserved) and solves are warm-started
    from the shifted previous optimum.
    """
    count = scenario.vehicle_count
    steps = int(math.ceil(scenario.duration / scenario.dt - 1e-9))
    rows = steps + 1
    model = scenario.model()
    cfg = scenario.mpc
    horizon, dt = cfg.np, scenario.dt
    d_min = scenario.separation.d_min
    centralized = scenario.control_mode == "centralized"

    if centralized:
        stacked_model, stacked_cfg = _stacked_system(scenario)
        fleet = Controller(stacked_model, stacked_cfg)
    else:
        controllers = [Controller(model, cfg) for _ in range(count)]

    log = TrajectoryLog(
        times=np.zeros(rows),
        states=np.zeros((rows, count, 6)),
        inputs=np.zeros((rows, count, 3)),
        references=np.zeros((rows, count, 6)),
        iterations=np.zeros((rows, count), dtype=int),
        residuals=np.zeros((rows, count)),
        converged=np.zeros((rows, count), dtype=bool),
        formation_errors=np.zeros((rows, count)),
        min_pairwise=np.full((rows, count), np.nan),
        min_clearance=np.full((rows, count), np.nan),
        obstacle_circles=tuple((float(o.center[0]), float(o.center[1]),
                                float(o.effective_radius)) for o in scenario.obstacles),
        predicted_next=np.zeros((rows, count, 6)),
    )

    xs = np.array([s.as_vector() for s in scenario.initial_states])
    headings = [s.heading for s in scenario.initial_states]

    for i in range(rows):
        t = i * dt
        states = []
        for v in range(count):
            state = VehicleState.from_vector(xs[v], headings[v])
            headings[v] = state.heading
            states.append(state)
        anchor = virtual_point(scenario.path, t)

        leader = states[0] if scenario.formation_mode is FormationMode.LEADER_FOLLOWER else None
        refs = build_references(scenario.formation_mode, scenario.geometry,
                                scenario.path, t, horizon, dt, leader_state=leader)

        # Linearization trajectories: previous shifted predictions, or a
        # constant-velocity rollout on the first step.
        lin = []
        for v in range(count):
            if centralized:
                prev = fleet.state
                lin.append(_seed_prediction(states[v], horizon, dt) if prev is None
                           else prev.last_predicted_states[:, 6 * v:6 * v + 2])
            else:
                prev = controllers[v].state
                lin.append(_seed_prediction(states[v], horizon, dt) if prev is None
                           else prev.last_predicted_states[:, :2])

        if centralized:
            constraints: list[LinearConstraint] = []
            for v in range(count):
                for obs in scenario.obstacles:
                    constraints += obstacle_constraints(lin[v], obs, output_offset=3 * v)
            for a in range(count):
                for b in range(a + 1, count):
                    normals = pair_normals(lin[a], lin[b])
                    for k in range(horizon):
                        coeffs = np.zeros(3 * count)
                        coeffs[3 * a:3 * a + 2] = normals[k]
                        coeffs[3 * b:3 * b + 2] = -normals[k]
                        constraints.append(LinearConstraint(
                            step=k + 1, coeffs=coeffs, lower=d_min, soft=True))
            ref_table = np.hstack([refs[v] for v in range(count)])
            u_stacked = fleet.step(xs.ravel(), ref_table, constraints)
            diag = fleet.state.last_diagnostics
            predicted = fleet.state.predicted_next_state.reshape(count, 6)
            commands = [u_stacked[3 * v:3 * v + 3] for v in range(count)]
            diags = [diag] * count
        else:
            commands, diags, predicted = [], [], np.zeros((count, 6))
            for v in range(count):
                cons = []
                for obs in scenario.obstacles:
                    cons += obstacle_constraints(lin[v], obs)
                for w in range(count):
                    if w != v:
                        cons += separation_constraints(lin[v], lin[w],
                                                       scenario.separation)
                commands.append(controllers[v].step(xs[v], refs[v], cons))
                diags.append(controllers[v].state.last_diagnostics)
                predicted[v] = controllers[v].state.predicted_next_state

        log.times[i] = t
        for v in range(count):
            applied = inner_loop(commands[v], scenario.limits)
            slot = slot_reference(anchor, scenario.geometry.slots[v])
            log.states[i, v] = xs[v]
            log.inputs[i, v] = applied
            log.references[i, v] = slot.as_vector()
            log.iterations[i, v] = diags[v].iterations
            log.residuals[i, v] = diags[v].residual
            log.converged[i, v] = diags[v].converged
            log.formation_errors[i, v] = float(
                np.linalg.norm(states[v].position - slot.position))
            log.predicted_next[i, v] = predicted[v]
            if count > 1:
                log.min_pairwise[i, v] = min(
                    float(np.linalg.norm(xs[v, :2] - xs[w, :2]))
                    for w in range(count) if w != v)
            if scenario.obstacles:
                log.min_clearance[i, v] = min(
                    float(np.linalg.norm(xs[v, :2] - obs.center)) - obs.effective_radius
                    for obs in scenario.obstacles)

        if i < steps:
            for v in range(count):
                xs[v] = model.A @ xs[v] + model.B @ log.inputs[i, v]

    return log, compute_metrics(log, scenario)


# --------------------------------------------------------------------------
# Metrics


@dataclass(frozen=True)
class Metrics:
    """Aggregates of one run; None marks quantities with nothing to measure.

    total_cost sums realized tracking error against the logged slot
    references (state weight Q) over all rows plus applied-input effort
    (weight R) over all propagated rows; comparable across control modes.
    violation_count counts exact-distance breaches per vehicle and sample,
    as reported by validate_clearance.
    """

    rms_formation_error: float
    max_formation_error: float
    min_separation: float | None
    min_obstacle_clearance: float | None
    violation_count: int
    mean_solver_iterations: float
    total_cost: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def compute_metrics(log: TrajectoryLog, scenario: Scenario) -> Metrics:
    """Aggregate a trajectory log; violations come from exact clearances."""
    errs = log.formation_errors
    rms = float(np.sqrt(np.mean(errs ** 2)))
    max_err = float(np.max(errs))

    min_sep = None
    if log.vehicles > 1 and np.any(np.isfinite(log.min_pairwise)):
        min_sep = float(np.nanmin(log.min_pairwise))
    min_clear = None
    if scenario.obstacles and np.any(np.isfinite(log.min_clearance)):
        min_clear = float(np.nanmin(log.min_clearance))

    violations = 0
    for v in range(log.vehicles):
        others = [log.states[:, w, :2] for w in range(log.vehicles) if w != v]
        report = validate_clearance(log.states[:, v, :2], scenario.obstacles,
                                    scenario.separation, others)
        violations += len(report.violations)

    Q, R = scenario.mpc.Q, scenario.mpc.R
    cost = 0.0
    for i in range(log.steps):
        for v in range(log.vehicles):
            e = log.states[i, v] - log.references[i, v]
            cost += float(e @ Q @ e)
            if i < log.steps - 1:
                u = log.inputs[i, v]
                cost += float(u @ R @ u)

    return Metrics(
        rms_formation_error=rms,
        max_formation_error=max_err,
        min_separation=min_sep,
        min_obstacle_clearance=min_clear,
        violation_count=violations,
        mean_solver_iterations=float(np.mean(log.iterations)),
        total_cost=cost,
    )


def write_metrics_json(metrics: Metrics, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(metrics.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# CSV serialization

CSV_HEADER = ("step,time,vehicle,px,py,pz,vx,vy,vz,ux,uy,uz,"
              "ref_px,ref_py,ref_pz,ref_vx,ref_vy,ref_vz,"
              "solver_iterations,solver_residual,solver_converged,"
              "formation_error,min_pairwise_distance,min_obstacle_clearance")


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _fmt_opt(x: float) -> str:
    return "" if math.isnan(x) else _fmt(x)


def write_trajectory_csv(log: TrajectoryLog, path):
    """One row per (step, vehicle); header and float format are fixed."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for cx, cy, r_eff in log.obstacle_circles:
            fh.write(f"# obstacle: {_fmt(cx)} {_fmt(cy)} {_fmt(r_eff)}\n")
        fh.write(CSV_HEADER + "\n")
        for i in range(log.steps):
            for v in range(log.vehicles):
                cells = [str(i), _fmt(log.times[i]), str(v)]
                cells += [_fmt(x) for x in log.states[i, v]]
                cells += [_fmt(x) for x in log.inputs[i, v]]
                cells += [_fmt(x) for x in log.references[i, v]]
                cells.append(str(int(log.iterations[i, v])))
                cells.append(_fmt(log.residuals[i, v]))
                cells.append("1" if log.converged[i, v] else "0")
                cells.append(_fmt(log.formation_errors[i, v]))
                cells.append(_fmt_opt(log.min_pairwise[i, v]))
                cells.append(_fmt_opt(log.min_clearance[i, v]))
                fh.write(",".join(cells) + "\n")


def read_trajectory_csv(path) -> TrajectoryLog:
    """Rebuild a TrajectoryLog from its CSV serialization.

    Exact inverse of write_trajectory_csv for every serialized field
    (predicted_next is diagnostic-only and comes back as None).
    """
    obstacles = []
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = None
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("# obstacle:"):
                parts = line.split(":", 1)[1].split()
                if len(parts) != 3:
                    raise ConfigurationError(f"{path}: malformed obstacle line: {line}")
                obstacles.append(tuple(float(p) for p in parts))
                continue
            if header is None:
                if line != CSV_HEADER:
                    raise ConfigurationError(f"{path}: unexpected CSV header")
                header = line
                continue
            rows.append(line.split(","))
    if header is None or not rows:
        raise ConfigurationError(f"{path}: no trajectory rows found")

    vehicles = max(int(r[2]) for r in rows) + 1
    steps = max(int(r[0]) for r in rows) + 1
    if len(rows) != steps * vehicles:
        raise ConfigurationError(
            f"{path}: expected {steps * vehicles} rows for {steps} steps x "
            f"{vehicles} vehicles, found {len(rows)}")

    log = TrajectoryLog(
        times=np.zeros(steps),
        states=np.zeros((steps, vehicles, 6)),
        inputs=np.zeros((steps, vehicles, 3)),
        references=np.zeros((steps, vehicles, 6)),
        iterations=np.zeros((steps, vehicles), dtype=int),
        residuals=np.zeros((steps, vehicles)),
        converged=np.zeros((steps, vehicles), dtype=bool),
        formation_errors=np.zeros((steps, vehicles)),
        min_pairwise=np.full((steps, vehicles), np.nan),
        min_clearance=np.full((steps, vehicles), np.nan),
        obstacle_circles=tuple(obstacles),
        predicted_next=None,
    )
    for r in rows:
        i, v = int(r[0]), int(r[2])
        log.times[i] = float(r[1])
        log.states[i, v] = [float(x) for x in r[3:9]]
        log.inputs[i, v] = [float(x) for x in r[9:12]]
        log.references[i, v] = [float(x) for x in r[12:18]]
        log.iterations[i, v] = int(r[18])
        log.residuals[i, v] = float(r[19])
        log.converged[i, v] = r[20] == "1"
        log.formation_errors[i, v] = float(r[21])
        log.min_pairwise[i, v] = float(r[22]) if r[22] else np.nan
        log.min_clearance[i, v] = float(r[23]) if r[23] else np.nan
    return log
