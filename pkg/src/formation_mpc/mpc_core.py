"""Finite-horizon constrained MPC over a discrete LTI model.

The predicted state trajectory is condensed to an affine map of the
stacked input sequence, X = F x0 + G U, so each control step reduces to a
dense QP in U (plus one nonnegative slack per soft constraint row). The
receding-horizon loop solves that QP, applies the first input, and shifts
the solution one step as the next warm start.

Horizons: states are predicted over np steps, the first nu inputs are free
decision variables, and beyond nu the input follows the fixed terminal
feedback u = K x (K = 0 by default). Box constraints are enforced over the
first nc steps.

The QP itself is solved by a dense operator-splitting iteration
(regularized KKT solve alternating with projection onto the constraint
set) followed by an active-set polish step; warm-startable and
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve

from .exceptions import ConfigurationError
from .vehicle_models import StateSpaceModel


# --------------------------------------------------------------------------
# Quadratic program and its solver


@dataclass(frozen=True)
class QpProblem:
    """Condensed quadratic program over stacked inputs plus slack variables.

    minimize 0.5 u' H u + f' u subject to A_ineq u <= b_ineq. The decision
    vector is [U; s]: `n_inputs` stacked control entries followed by
    `n_slack` nonnegative slacks, one per soft constraint row. `constant`
    is the objective offset dropped by condensation, kept so the
    quadratic-form value can be compared against a simulated cost.
    """

    H: np.ndarray
    f: np.ndarray
    A_ineq: np.ndarray
    b_ineq: np.ndarray
    n_inputs: int
    n_slack: int = 0
    constant: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "H", np.asarray(self.H, dtype=float))
        object.__setattr__(self, "f", np.asarray(self.f, dtype=float).ravel())
        A = np.asarray(self.A_ineq, dtype=float).reshape(-1, self.H.shape[0])
        object.__setattr__(self, "A_ineq", A)
        object.__setattr__(self, "b_ineq", np.asarray(self.b_ineq, dtype=float).ravel())

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    def value(self, u) -> float:
        """Objective value 0.5 u'Hu + f'u + constant at a point."""
        u = np.asarray(u, dtype=float)
        return float(0.5 * u @ self.H @ u + self.f @ u + self.constant)


@dataclass
class SolveDiagnostics:
    iterations: int
    residual: float
    converged: bool
    polished: bool = False
    duals: np.ndarray | None = None


# Splitting parameters. Fixed values keep the iteration deterministic;
# the step size is rescaled from residual ratios on a fixed schedule.
_SIGMA = 1e-6
_ALPHA = 1.6
_RHO_MIN, _RHO_MAX = 1e-6, 1e6
_CHECK_EVERY = 10
_RHO_UPDATE_EVERY = 50
_SCALING_ITERS = 3
_POLISH_REG = 1e-9
_POLISH_PASSES = 8


def _equilibrate(H, f, A, b):
    """Diagonal scaling of the QP data plus cost normalization.

    Slack penalties put entries many orders of magnitude above the input
    block on the Hessian diagonal; without rescaling the splitting
    iteration crawls on those coordinates. Returns scaled copies together
    with the diagonals D, E and cost factor c that map back:
    x = D x_s, y = E y_s / c.
    """
    Hs, fs = H.copy(), f.copy()
    As, bs = A.copy(), b.copy()
    d, q = H.shape[0], A.shape[0]
    D, E, c = np.ones(d), np.ones(q), 1.0
    for _ in range(_SCALING_ITERS):
        col = np.max(np.abs(Hs), axis=0, initial=0.0)
        if q:
            col = np.maximum(col, np.max(np.abs(As), axis=0))
        col[col == 0.0] = 1.0
        dx = 1.0 / np.sqrt(col)
        Hs = dx[:, None] * Hs * dx[None, :]
        fs *= dx
        D *= dx
        if q:
            As *= dx[None, :]
            row = np.max(np.abs(As), axis=1)
            row[row == 0.0] = 1.0
            de = 1.0 / np.sqrt(row)
            As *= de[:, None]
            bs *= de
            E *= de
        gamma = 1.0 / max(float(np.mean(np.max(np.abs(Hs), axis=0))),
                          float(np.max(np.abs(fs), initial=0.0)), 1e-12)
        Hs *= gamma
        fs *= gamma
        c *= gamma
    return Hs, fs, As, bs, D, E, c


def solve_qp(qp: QpProblem, warm_start=None, tol: float = 1e-8,
             max_iter: int = 4000, warm_start_duals=None,
             ) -> tuple[np.ndarray, SolveDiagnostics]:
    """Solve a QpProblem to the requested KKT tolerance.

    warm_start may cover the full decision vector or just its leading input
    block; missing entries start at zero. warm_start_duals seeds the row
    multipliers (ignored unless it matches the row count); without it the
    trailing slack-nonnegativity rows start at their exact-penalty weight,
    the multiplier every satisfied soft row settles on. On iteration
    exhaustion the active set of the best iterate is polished once; if the
    polished point passes the KKT check it is returned as converged,
    otherwise the best iterate comes back with converged=False.

    Raises ValueError if H is not positive definite.
    """
    H, f, A, b = qp.H, qp.f, qp.A_ineq, qp.b_ineq
    d = qp.dim
    q = A.shape[0]

    try:
        chol_H = cho_factor(H, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise ValueError("QP Hessian is not positive definite") from exc

    x = np.zeros(d)
    if warm_start is not None:
        w = np.asarray(warm_start, dtype=float).ravel()
        x[: min(d, w.size)] = w[: min(d, w.size)]

    if q == 0:
        x = cho_solve(chol_H, -f, check_finite=False)
        res = float(np.max(np.abs(H @ x + f), initial=0.0))
        return x, SolveDiagnostics(iterations=0, residual=res, converged=True,
                                   duals=np.zeros(0))

    Hs, fs, As, bs, D, E, c = _equilibrate(H, f, A, b)
    xs = x / D
    rho = 1.0
    kkt = cho_factor(Hs + _SIGMA * np.eye(d) + rho * (As.T @ As), check_finite=False)
    zs = np.minimum(As @ xs, bs)
    y0 = np.zeros(q)
    if warm_start_duals is not None:
        w = np.asarray(warm_start_duals, dtype=float).ravel()
        if w.size == q:
            y0 = np.maximum(w, 0.0)
    elif qp.n_slack:
        y0[q - qp.n_slack:] = f[qp.n_inputs:]
    ys = y0 * c / E

    def residuals(x, z, y):
        r_prim = float(np.max(np.abs(A @ x - z), initial=0.0))
        r_dual = float(np.max(np.abs(H @ x + f + A.T @ y), initial=0.0))
        return r_prim, r_dual

    def unscale():
        return D * xs, zs / E, E * ys / c

    best_x = x.copy()
    best_y = y0.copy()
    best_res = np.inf
    converged = False
    iters = 0

    for k in range(1, max_iter + 1):
        iters = k
        rhs = _SIGMA * xs - fs + As.T @ (rho * zs - ys)
        x_hat = cho_solve(kkt, rhs, check_finite=False)
        z_hat = As @ x_hat
        xs = _ALPHA * x_hat + (1.0 - _ALPHA) * xs
        z_relaxed = _ALPHA * z_hat + (1.0 - _ALPHA) * zs
        z_new = np.minimum(z_relaxed + ys / rho, bs)
        ys = ys + rho * (z_relaxed - z_new)
        zs = z_new

        if k % _CHECK_EVERY == 0 or k == max_iter:
            x, z, y = unscale()
            r_prim, r_dual = residuals(x, z, y)
            scale_p = max(np.max(np.abs(A @ x), initial=0.0),
                          np.max(np.abs(z), initial=0.0))
            scale_d = max(np.max(np.abs(H @ x), initial=0.0),
                          np.max(np.abs(A.T @ y), initial=0.0),
                          np.max(np.abs(f), initial=0.0))
            res = max(r_prim, r_dual)
            if res < best_res:
                best_res, best_x, best_y = res, x.copy(), y.copy()
            if r_prim <= tol * (1.0 + scale_p) and r_dual <= tol * (1.0 + scale_d):
                converged = True
                break
            if k % _RHO_UPDATE_EVERY == 0:
                # The step size acts on the scaled iterates, so its update
                # must compare the scaled residuals; the unscaled ratio can
                # sit near 1 while the scaled system is badly unbalanced.
                rs_p = float(np.max(np.abs(As @ xs - zs), initial=0.0))
                rs_d = float(np.max(np.abs(Hs @ xs + fs + As.T @ ys), initial=0.0))
                ss_p = max(np.max(np.abs(As @ xs), initial=0.0),
                           np.max(np.abs(zs), initial=0.0))
                ss_d = max(np.max(np.abs(Hs @ xs), initial=0.0),
                           np.max(np.abs(As.T @ ys), initial=0.0),
                           np.max(np.abs(fs), initial=0.0))
                ratio = (rs_p / (ss_p + 1e-30)) / (rs_d / (ss_d + 1e-30) + 1e-30)
                rho_new = float(np.clip(rho * np.sqrt(ratio), _RHO_MIN, _RHO_MAX))
                if rho_new > 5.0 * rho or rho_new < rho / 5.0:
                    rho = rho_new
                    kkt = cho_factor(Hs + _SIGMA * np.eye(d) + rho * (As.T @ As),
                                     check_finite=False)

    x, z, y = unscale()
    r_prim, r_dual = residuals(x, z, y)
    res = max(r_prim, r_dual)
    if res > best_res and not converged:
        x, y, res = best_x, best_y, best_res

    diag = SolveDiagnostics(iterations=iters, residual=res, converged=converged,
                            duals=y)
    x_pol, res_pol = _polish(H, f, A, b, x, y, tol)
    if x_pol is not None:
        x, diag.residual, diag.polished = x_pol, res_pol, True
        diag.converged = True
    return x, diag


def _solve_working_set(H, f, A, b, work):
    """Equality KKT solve on a working set of rows.

    Factored with a small diagonal regularization and tightened by
    iterative refinement against the unregularized matrix, so the rows end
    up satisfied to machine precision instead of solver tolerance. Returns
    (x, lam) or None when the factorization degenerates.
    """
    d = H.shape[0]
    na = work.size
    if na == 0:
        x = cho_solve(cho_factor(H, check_finite=False), -f, check_finite=False)
        return x, np.zeros(0)
    A_act = A[work]
    kkt = np.block([[H, A_act.T], [A_act, np.zeros((na, na))]])
    reg = np.concatenate([np.full(d, _POLISH_REG), np.full(na, -_POLISH_REG)])
    rhs = np.concatenate([-f, b[work]])
    try:
        lu = lu_factor(kkt + np.diag(reg), check_finite=False)
        sol = lu_solve(lu, rhs, check_finite=False)
        for _ in range(3):
            sol += lu_solve(lu, rhs - kkt @ sol, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return None
    if not np.all(np.isfinite(sol)):
        return None
    return sol[:d], sol[d:]


def _polish(H, f, A, b, x, y, tol):
    """Active-set finish from the splitting iterates.

    Starts from the rows the iterates mark active, then repairs the guess:
    rows with negative multipliers are dropped, rows the candidate violates
    are added, for a bounded number of passes. Returns (polished_x,
    residual) once a pass survives an independent KKT verification, or
    (None, None), in which case the caller keeps the splitting iterate.
    """
    act_tol = max(tol, 1e-9)
    # The working-set refinement is a finisher: rows it settles on hold to
    # near machine precision, so its own thresholds must sit far below the
    # splitting tolerance or ADMM-level slop masks misclassified rows.
    feas_tol = 1e-10
    slack = b - A @ x
    work = np.flatnonzero((y > act_tol) | (slack < act_tol * (1.0 + np.abs(b))))

    for _ in range(_POLISH_PASSES):
        out = _solve_working_set(H, f, A, b, work)
        if out is None:
            return None, None
        x_pol, lam = out

        scale_l = 1.0 + np.max(lam, initial=0.0)
        resid = A @ x_pol - b
        scale_p = 1.0 + np.max(np.abs(A @ x_pol), initial=0.0)
        drop = lam < -feas_tol * scale_l
        add = np.flatnonzero(resid > feas_tol * scale_p)
        add = np.setdiff1d(add, work, assume_unique=False)
        if not np.any(drop) and add.size == 0:
            stat = np.max(np.abs(H @ x_pol + f + A[work].T @ lam), initial=0.0)
            prim = np.max(resid, initial=0.0)
            scale_d = 1.0 + max(np.max(np.abs(f), initial=0.0),
                                np.max(np.abs(H @ x_pol), initial=0.0))
            if stat <= feas_tol * scale_d and prim <= feas_tol * scale_p:
                return x_pol, float(max(stat, prim, 0.0))
            return None, None
        work = np.union1d(work[~drop], add)
    return None, None


# --------------------------------------------------------------------------
# Controller configuration and condensed problem construction


def _as_weight(name: str, value, size: int | None = None) -> np.ndarray:
    """Normalize a weight given as scalar, diagonal vector, or full matrix."""
    w = np.asarray(value, dtype=float)
    if w.ndim == 0:
        if size is None:
            raise ConfigurationError(f"{name}: scalar weight needs a known dimension")
        w = w * np.eye(size)
    elif w.ndim == 1:
        w = np.diag(w)
    if w.shape[0] != w.shape[1]:
        raise ConfigurationError(f"{name} must be square, got shape {w.shape}")
    return w


def _check_psd(name: str, w: np.ndarray, strict: bool = False):
    eigs = np.linalg.eigvalsh(0.5 * (w + w.T))
    if strict and eigs.min() <= 0:
        raise ConfigurationError(f"{name} must be positive definite")
    if not strict and eigs.min() < -1e-10 * max(1.0, abs(eigs.max())):
        raise ConfigurationError(f"{name} must be positive semidefinite")


@dataclass(frozen=True)
class MpcConfig:
    """Horizons, weights, bounds, and solver settings for one controller.

    np: prediction horizon, nu: control horizon, nc: constraint horizon
    (steps, 1 <= nu, nc <= np). Q/R/P weight the stage state error, input,
    and terminal state error; K is the terminal feedback applied for steps
    nu..np-1. Bounds u_min/u_max are hard input boxes; y_min/y_max
    (optional) are output boxes. Soft constraint rows added at build time
    are penalized through slack_penalty.
    """

    np: int
    nu: int
    nc: int
    Q: np.ndarray
    R: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    P: np.ndarray | None = None
    K: np.ndarray | None = None
    y_min: np.ndarray | None = None
    y_max: np.ndarray | None = None
    solver_tol: float = 1e-8
    solver_max_iter: int = 4000
    slack_penalty: float = 1e4

    def __post_init__(self):
        for name in ("np", "nu", "nc"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {v!r}")
        if self.nu > self.np:
            raise ConfigurationError(f"nu ({self.nu}) must not exceed np ({self.np})")
        if self.nc > self.np:
            raise ConfigurationError(f"nc ({self.nc}) must not exceed np ({self.np})")

        Q = _as_weight("Q", self.Q)
        R = _as_weight("R", self.R)
        P = Q if self.P is None else _as_weight("P", self.P, Q.shape[0])
        _check_psd("Q", Q)
        _check_psd("P", P)
        _check_psd("R", R, strict=True)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "P", P)

        m, n = R.shape[0], Q.shape[0]
        K = np.zeros((m, n)) if self.K is None else np.asarray(self.K, dtype=float)
        if K.shape != (m, n):
            raise ConfigurationError(f"K must have shape ({m}, {n}), got {K.shape}")
        object.__setattr__(self, "K", K)

        u_min = np.broadcast_to(np.asarray(self.u_min, dtype=float), (m,)).copy()
        u_max = np.broadcast_to(np.asarray(self.u_max, dtype=float), (m,)).copy()
        if not np.all(u_min < u_max):
            raise ConfigurationError("u_min must be elementwise below u_max")
        object.__setattr__(self, "u_min", u_min)
        object.__setattr__(self, "u_max", u_max)

        for name in ("y_min", "y_max"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=float).ravel())
        if self.y_min is not None and self.y_max is not None:
            if self.y_min.shape != self.y_max.shape:
                raise ConfigurationError("y_min and y_max must have equal length")
            if not np.all(self.y_min < self.y_max):
                raise ConfigurationError("y_min must be elementwise below y_max")

        if not (self.solver_tol > 0):
            raise ConfigurationError(f"solver_tol must be positive, got {self.solver_tol}")
        if not (self.slack_penalty > 0):
            raise ConfigurationError(
                f"slack_penalty must be positive, got {self.slack_penalty}")

    @property
    def n_states(self) -> int:
        return self.Q.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.R.shape[0]



@dataclass(frozen=True)
class PredictionMatrices:
    """Affine prediction X = F x0 + G U over the prediction horizon.

    F is (np*n, n), G is (np*n, nu*m); both fold in the terminal feedback
    for steps beyond the control horizon. Row block k (0-based, predicting
    step k+1) of G is zero for input indices beyond k: inputs cannot act
    before they are applied. C is carried along for output constraints.
    """

    F: np.ndarray
    G: np.ndarray
    C: np.ndarray
    horizon: int
    control_horizon: int

    @property
    def n(self) -> int:
        return self.F.shape[1]

    @property
    def m(self) -> int:
        return self.G.shape[1] // self.control_horizon

    def state_block(self, step: int) -> tuple[np.ndarray, np.ndarray]:
        """(F_k, G_k) rows predicting the state at 1-based step k."""
        if not 1 <= step <= self.horizon:
            raise ConfigurationError(
                f"step {step} outside prediction horizon 1..{self.horizon}")
        lo, hi = (step - 1) * self.n, step * self.n
        return self.F[lo:hi], self.G[lo:hi]

    def predict(self, x0, U) -> np.ndarray:
        """Predicted states, shape (np, n)."""
        x0 = np.asarray(x0, dtype=float).ravel()
        U = np.asarray(U, dtype=float).ravel()
        return (self.F @ x0 + self.G @ U).reshape(self.horizon, self.n)


@dataclass(frozen=True)
class LinearConstraint:
    """One linear inequality coeffs . y_step >= lower over the predicted
    output at a 1-based step of the horizon.

    coeffs applies to output entries [start : start + len(coeffs)];
    remaining entries have zero coefficient. Soft rows get a penalized
    nonnegative slack so the QP stays feasible under conflict.
    """

    step: int
    coeffs: np.ndarray
    lower: float
    soft: bool = True
    start: int = 0

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float).ravel())


@dataclass(frozen=True)
class ControllerState:
    """Carry-over between receding-horizon steps.

    last_solution holds the previous optimum shifted one step (terminal-law
    fill at the tail) and seeds the next solve; last_predicted_states holds
    the matching shifted prediction, the linearization trajectory for the
    next step's avoidance constraints. predicted_next_state is the
    unshifted one-step-ahead prediction from the latest solve.
    """

    last_solution: np.ndarray
    last_predicted_states: np.ndarray
    step_index: int
    predicted_next_state: np.ndarray
    last_diagnostics: SolveDiagnostics | None = None


def build_prediction(model: StateSpaceModel, config: MpcConfig) -> PredictionMatrices:
    """Condense the model dynamics over the horizon into X = F x0 + G U."""
    n, m = model.n, model.m
    if config.Q.shape != (n, n):
        raise ConfigurationError(
            f"Q has shape {config.Q.shape}, expected ({n}, {n}) for this model")
    if config.R.shape != (m, m):
        raise ConfigurationError(
            f"R has shape {config.R.shape}, expected ({m}, {m}) for this model")
    if config.u_min.size != m:
        raise ConfigurationError(f"u_min has length {config.u_min.size}, expected {m}")
    for name in ("y_min", "y_max"):
        v = getattr(config, name)
        if v is not None and v.size != model.p:
            raise ConfigurationError(f"{name} has length {v.size}, expected {model.p}")

    Np, Nu = config.np, config.nu
    A, B, K = model.A, model.B, config.K
    A_term = A + B @ K

    F = np.zeros((Np * n, n))
    G = np.zeros((Np * n, Nu * m))
    Fk = np.eye(n)
    Gk = np.zeros((n, Nu * m))
    for k in range(Np):
        if k < Nu:
            Fk = A @ Fk
            Gk = A @ Gk
            Gk[:, k * m:(k + 1) * m] += B
        else:
            Fk = A_term @ Fk
            Gk = A_term @ Gk
        F[k * n:(k + 1) * n] = Fk
        G[k * n:(k + 1) * n] = Gk
    return PredictionMatrices(F=F, G=G, C=model.C.copy(), horizon=Np,
                              control_horizon=Nu)


def _stack_reference(x_ref, Np: int, n: int) -> np.ndarray:
    """Accept a single state, an (np, n) table, or a flat stack; return flat."""
    r = np.asarray(x_ref, dtype=float)
    if r.ndim == 0:
        r = np.full(n, float(r))
    if r.ndim == 1 and r.size == n:
        return np.tile(r, Np)
    if r.ndim == 2 and r.shape == (Np, n):
        return r.ravel()
    if r.ndim == 1 and r.size == Np * n:
        return r
    raise ConfigurationError(
        f"x_ref has shape {np.shape(x_ref)}, expected ({n},), ({Np}, {n}) or ({Np * n},)")


def build_qp(pred: PredictionMatrices, config: MpcConfig, x0, x_ref,
             extra_constraints=()) -> QpProblem:
    """Assemble the tracking QP over [U; slacks].

    The cost is the horizon cost written in error coordinates e = x - x_ref;
    minimizing the QP over U minimizes that cost (they differ by the
    U-independent `constant`). Input boxes cover steps 0..nc-1 of U, output
    boxes cover predicted steps 1..nc, and each extra constraint becomes a
    half-plane row over the predicted outputs (soft rows get one slack
    column with coefficient -1, bounded below by zero).
    """
    n, m, Np, Nu, Nc = pred.n, pred.m, pred.horizon, pred.control_horizon, config.nc
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != n:
        raise ConfigurationError(f"x0 has length {x0.size}, expected {n}")
    if not np.all(np.isfinite(x0)):
        raise ConfigurationError("x0 contains non-finite entries")
    ref = _stack_reference(x_ref, Np, n)

    Qbar = np.zeros((Np * n, Np * n))
    for k in range(Np - 1):
        Qbar[k * n:(k + 1) * n, k * n:(k + 1) * n] = config.Q
    Qbar[(Np - 1) * n:, (Np - 1) * n:] = config.P
    Rbar = np.kron(np.eye(Nu), config.R)

    e_free = pred.F @ x0 - ref
    H_uu = 2.0 * (pred.G.T @ Qbar @ pred.G + Rbar)
    H_uu = 0.5 * (H_uu + H_uu.T)
    f_u = 2.0 * pred.G.T @ (Qbar @ e_free)
    e0 = x0 - ref[:n]
    constant = float(e_free @ Qbar @ e_free + e0 @ config.Q @ e0)

    extra = list(extra_constraints)
    n_soft = sum(1 for c in extra if c.soft)
    n_u = Nu * m
    dim = n_u + n_soft

    H = np.zeros((dim, dim))
    H[:n_u, :n_u] = H_uu
    f = np.zeros(dim)
    f[:n_u] = f_u
    if n_soft:
        sl = slice(n_u, dim)
        H[sl, sl] = config.slack_penalty * np.eye(n_soft)
        # Linear term makes the penalty exact: slacks stay at zero whenever
        # the soft rows are satisfiable.
        f[n_u:] = config.slack_penalty

    rows: list[np.ndarray] = []
    rhs: list[float] = []

    def add_row(row, bound):
        rows.append(row)
        rhs.append(float(bound))

    # Input boxes, steps 0..nc-1 (only decision inputs exist to constrain).
    for k in range(min(Nc, Nu)):
        for j in range(m):
            row = np.zeros(dim)
            row[k * m + j] = 1.0
            if np.isfinite(config.u_max[j]):
                add_row(row.copy(), config.u_max[j])
            if np.isfinite(config.u_min[j]):
                add_row(-row, -config.u_min[j])

    # Output boxes over predicted steps 1..nc.
    if config.y_min is not None or config.y_max is not None:
        p = pred.C.shape[0]
        y_max = config.y_max if config.y_max is not None else np.full(p, np.inf)
        y_min = config.y_min if config.y_min is not None else np.full(p, -np.inf)
        for k in range(1, Nc + 1):
            Fk, Gk = pred.state_block(k)
            CG = pred.C @ Gk
            free_y = pred.C @ (Fk @ x0)
            for j in range(p):
                row = np.zeros(dim)
                row[:n_u] = CG[j]
                if np.isfinite(y_max[j]):
                    add_row(row.copy(), y_max[j] - free_y[j])
                if np.isfinite(y_min[j]):
                    add_row(-row, free_y[j] - y_min[j])

    # Extra half-planes over predicted outputs; soft rows take a slack.
    p = pred.C.shape[0]
    slack_idx = 0
    for con in extra:
        if not 1 <= con.step <= Np:
            raise ConfigurationError(
                f"constraint step {con.step} outside prediction horizon 1..{Np}")
        if con.start < 0 or con.start + con.coeffs.size > p:
            raise ConfigurationError(
                f"constraint coefficients span outputs {con.start}.."
                f"{con.start + con.coeffs.size - 1}, model has {p}")
        a_full = np.zeros(p)
        a_full[con.start:con.start + con.coeffs.size] = con.coeffs
        Fk, Gk = pred.state_block(con.step)
        g_row = a_full @ pred.C @ Gk
        base = con.lower - a_full @ (pred.C @ (Fk @ x0))
        row = np.zeros(dim)
        row[:n_u] = -g_row
        if con.soft:
            row[n_u + slack_idx] = -1.0
            slack_idx += 1
        add_row(row, -base)

    # Slack nonnegativity.
    for i in range(n_soft):
        row = np.zeros(dim)
        row[n_u + i] = -1.0
        add_row(row, 0.0)

    A_ineq = np.vstack(rows) if rows else np.zeros((0, dim))
    b_ineq = np.asarray(rhs, dtype=float)
    return QpProblem(H=H, f=f, A_ineq=A_ineq, b_ineq=b_ineq,
                     n_inputs=n_u, n_slack=n_soft, constant=constant)


def evaluate_cost(model: StateSpaceModel, config: MpcConfig, x0, x_ref, U) -> float:
    """Horizon cost of an input sequence by forward simulation.

    Independent of the condensed QP: steps the model one sample at a time
    (terminal feedback beyond nu) and accumulates stage, input, and
    terminal terms in error coordinates. Matches the QP objective up to
    its stored constant.
    """
    n, m = model.n, model.m
    x = np.asarray(x0, dtype=float).ravel()
    U = np.asarray(U, dtype=float).ravel()
    if U.size != config.nu * m:
        raise ConfigurationError(f"U has length {U.size}, expected {config.nu * m}")
    ref = _stack_reference(x_ref, config.np, n).reshape(config.np, n)

    e0 = x - ref[0]
    cost = float(e0 @ config.Q @ e0)
    for k in range(config.np):
        u = U[k * m:(k + 1) * m] if k < config.nu else config.K @ x
        if k < config.nu:
            cost += float(u @ config.R @ u)
        x = model.A @ x + model.B @ u
        e = x - ref[k]
        W = config.P if k == config.np - 1 else config.Q
        cost += float(e @ W @ e)
    return cost


def mpc_step(controller: ControllerState | None, model: StateSpaceModel,
             config: MpcConfig, x_t, x_ref, extra_constraints=(),
             pred: PredictionMatrices | None = None,
             ) -> tuple[np.ndarray, ControllerState]:
    """One receding-horizon step: solve the QP, return the first input.

    The returned input is clamped to the box bounds as a safety net against
    solver tolerance slop. The updated state carries the shifted solution
    and shifted prediction as next-step warm start and linearization
    trajectory. On non-convergence the best iterate is still applied and
    flagged in the stored diagnostics.
    """
    if pred is None:
        pred = build_prediction(model, config)
    m, Nu = pred.m, pred.control_horizon

    qp = build_qp(pred, config, x_t, x_ref, extra_constraints)
    warm = None
    warm_duals = None
    if controller is not None:
        if controller.last_solution.size == Nu * m:
            warm = controller.last_solution
        if controller.last_diagnostics is not None:
            warm_duals = controller.last_diagnostics.duals
    sol, diag = solve_qp(qp, warm_start=warm, tol=config.solver_tol,
                         max_iter=config.solver_max_iter,
                         warm_start_duals=warm_duals)
    U = sol[:Nu * m]

    u_t = np.clip(U[:m], config.u_min, config.u_max)

    X = pred.predict(x_t, U)
    x_term_next = (model.A + model.B @ config.K) @ X[-1]
    shifted_states = np.vstack([X[1:], x_term_next])
    fill = config.K @ X[Nu - 1]
    shifted_U = np.concatenate([U[m:], fill])

    step_index = 0 if controller is None else controller.step_index + 1
    new_state = ControllerState(
        last_solution=shifted_U,
        last_predicted_states=shifted_states,
        step_index=step_index,
        predicted_next_state=X[0].copy(),
        last_diagnostics=diag,
    )
    return u_t, new_state


class Controller:
    """Receding-horizon controller bound to one model and configuration.

    Caches the prediction matrices and owns the carry-over state; one
    instance per vehicle, never shared across logical threads.
    """

    def __init__(self, model: StateSpaceModel, config: MpcConfig):
        self.model = model
        self.config = config
        self.prediction = build_prediction(model, config)
        self.state: ControllerState | None = None

    def step(self, x_t, x_ref, extra_constraints=()) -> np.ndarray:
        u, self.state = mpc_step(self.state, self.model, self.config, x_t,
                                 x_ref, extra_constraints, pred=self.prediction)
        return u

    @property
    def diagnostics(self) -> SolveDiagnostics | None:
        return None if self.state is None else self.state.last_diagnostics

    def reset(self):
        self.state = None


def riccati_terminal_weight(A, B, Q, R, tol: float = 1e-10,
                            max_iter: int = 100000) -> np.ndarray:
    """Stationary solution of the discrete-time Riccati recursion.

    Fixed-point iteration from P = Q; used as a stabilizing terminal weight.
    Raises ConfigurationError when the iteration fails to settle (e.g. the
    pair is not stabilizable).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = _as_weight("Q", Q, A.shape[0])
    R = _as_weight("R", R, B.shape[1])
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        gain = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ (A - B @ gain)
        P_next = 0.5 * (P_next + P_next.T)
        if np.max(np.abs(P_next - P)) <= tol * max(1.0, np.max(np.abs(P_next))):
            return P_next
        P = P_next
    raise ConfigurationError("Riccati iteration did not converge; check (A, B) stabilizability")
