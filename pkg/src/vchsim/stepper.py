"""Delay-decoupled two-stage time integrator.

Each step advances the pair (mu, rho) by the backward-Euler scheme that
mirrors the inductive construction used to build solutions:

1. the order-parameter stage solves the implicit phase-field equation

       delta (rho - rho_prev)/tau - Lap rho + beta_lam(rho) + pi(rho)
           = mu_delayed g'(rho)

   with the monotone graph replaced by its Yosida regularization and the
   chemical potential fed in from one step earlier (the delay is what
   decouples the system);

2. the potential stage solves the linearized uniformly parabolic equation

       a (mu - mu_prev)/tau + b+ mu - b- mu_prev
           - div(kappa_tau(mu_prev) grad mu) = 0

   with a = eps + 2 g(rho_new) >= eps, the reaction b = g'(rho_new) dt_rho
   split by sign (implicit gain, explicit loss), and the mobility floored
   by the step size and lagged at mu_prev.  The system matrix is an
   M-matrix, so nonnegative data stay nonnegative -- the discrete stand-in
   for the negative-part test that proves positivity at the continuous
   level.

Stage order is fixed rho-then-mu; the mu stage consumes rho_new and its
backward difference as frozen coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu

from .constitutive import ClampIndicator, Laws, yosida_array
from .mesh import (
    Grid,
    ScalarField,
    div_k_grad_arrays,
    field_of,
    laplacian_matrix,
)


class ValidationError(ValueError):
    """Configuration or data violates a stated hypothesis."""


class StepFailure(RuntimeError):
    """A stage solver did not converge; carries the last residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class SolverFailure(RuntimeError):
    """A run aborted mid-way; the partial trajectory is attached."""

    def __init__(self, message: str, trajectory: "Trajectory"):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class SolverConfig:
    """Time-integration parameters.

    The step is tied to the final time by tau = T/N; only such steps are
    admitted.  ``yosida_lambda`` and ``mobility_floor_tau`` default to the
    step size, so refining the step simultaneously tightens the graph
    regularization and removes the parabolicity floor.
    """

    T: float
    n_steps: int
    tau: float = None
    epsilon: float = 1.0
    delta: float = 1.0
    yosida_lambda: float = None
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    linear_tol: float = 1e-11
    linear_max_iter: int = None
    sign_split_reaction: bool = True
    mobility_floor_tau: float = None
    face_average: str = "arithmetic"

    def __post_init__(self):
        if self.T < 0:
            raise ValidationError("final time must be nonnegative")
        if self.n_steps < 0:
            raise ValidationError("step count must be nonnegative")
        if self.n_steps == 0:
            if self.T != 0.0:
                raise ValidationError("N = 0 is admitted only with T = 0")
            object.__setattr__(self, "tau", 0.0)
        else:
            exact = self.T / self.n_steps
            if self.tau is None:
                object.__setattr__(self, "tau", exact)
            elif self.tau != exact:
                raise ValidationError(
                    f"violates tau = T/N: tau = {self.tau!r} but T/N = {exact!r}"
                )
            if not self.tau > 0:
                raise ValidationError("step size must be positive")
        if self.yosida_lambda is None:
            object.__setattr__(self, "yosida_lambda",
                               self.tau if self.n_steps > 0 else 1.0)
        if not self.yosida_lambda > 0:
            raise ValidationError("yosida_lambda must be positive")
        if self.mobility_floor_tau is None:
            object.__setattr__(self, "mobility_floor_tau", self.tau)
        if self.mobility_floor_tau < 0:
            raise ValidationError("mobility floor must be nonnegative")
        if not (self.epsilon > 0 and self.delta > 0):
            raise ValidationError("epsilon and delta must be positive")
        if not (self.newton_tol > 0 and self.linear_tol > 0):
            raise ValidationError("solver tolerances must be positive")
        if self.face_average not in ("arithmetic", "harmonic"):
            raise ValidationError("face_average must be arithmetic or harmonic")


@dataclass(frozen=True)
class StepReport:
    newton_iters: int = 0
    newton_residual: float = 0.0
    linear_iters: int = 0
    linear_residual: float = 0.0
    min_mu: float = 0.0
    max_mu: float = 0.0
    rho_range: tuple = (0.0, 0.0)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SimState:
    """Immutable snapshot (t, mu, rho, xi, backward difference of rho)."""

    t: float
    mu: ScalarField
    rho: ScalarField
    xi: ScalarField
    dt_rho: ScalarField

    def __post_init__(self):
        for f in (self.mu, self.rho, self.xi, self.dt_rho):
            if not f.values.flags.writeable:
                continue
            object.__setattr__(f, "values", _freeze(f.values))

    @property
    def grid(self) -> Grid:
        return self.mu.grid


@dataclass
class Trajectory:
    """Ordered snapshots of one run plus the per-step solver reports."""

    states: list
    reports: list = field(default_factory=list)
    cfg: SolverConfig = None

    @property
    def grid(self) -> Grid:
        return self.states[0].grid

    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    def __len__(self) -> int:
        return len(self.states)


# ---------------------------------------------------------------------------
# stages


def delayed_mu(history: Trajectory, t: float, tau: float,
               mu0: ScalarField) -> ScalarField:
    """The translated potential field: mu(t - tau) for t > tau, mu0 otherwise.

    The tie t == tau resolves to mu0 (one step of lag either way is
    first-order noise, but determinism demands a rule).
    """
    if t <= tau:
        return mu0
    target = t - tau
    tol = 1e-12 * max(1.0, abs(t))
    for state in reversed(history.states):
        if abs(state.t - target) <= tol:
            return state.mu
        if state.t < target - tol:
            break
    raise KeyError(f"no stored snapshot at t = {target!r} for the delay lookup")


def step_rho(prev: SimState, mu_del: ScalarField, cfg: SolverConfig,
             laws: Laws):
    """Implicit order-parameter stage.

    Damped Newton on the Yosida-regularized system; for the clamp graph a
    post-pass replaces the iterate by its exact resolvent pair, so the
    stored (rho, xi) satisfy the constraint and the complementarity sign
    conditions exactly (rho back in [a, b] bit-exactly).
    """
    grid = prev.grid
    L = laplacian_matrix(grid)
    nn = grid.num_nodes
    rho_prev = prev.rho.values.ravel()
    mu_d = mu_del.values.ravel()
    graph = laws.graph
    pot = laws.potential
    cpl = laws.coupling
    lam = cfg.yosida_lambda
    dt_coef = cfg.delta / cfg.tau

    def residual(r):
        return (dt_coef * (r - rho_prev) - L @ r + yosida_array(graph, lam, r)
                + pot.f2_prime(r) - mu_d * cpl.g_prime(r))

    r = rho_prev.copy()
    res = residual(r)
    res_norm = float(np.max(np.abs(res)))
    iters = 0
    eye = sps.identity(nn, format="csr")
    while res_norm > cfg.newton_tol:
        if iters >= cfg.newton_max_iter:
            raise StepFailure("Newton did not converge in the rho stage", res_norm)
        dcoef = (graph.yosida_derivative(lam, r) + pot.f2_second(r)
                 - mu_d * cpl.g_second(r))
        J = (dt_coef * eye - L + sps.diags(dcoef)).tocsc()
        try:
            step = splu(J).solve(res)
        except RuntimeError as exc:
            raise StepFailure(f"Jacobian solve failed: {exc}", res_norm) from exc
        alpha = 1.0
        for _ in range(40):
            trial = r - alpha * step
            trial_res = residual(trial)
            trial_norm = float(np.max(np.abs(trial_res)))
            if trial_norm <= (1.0 - 1e-4 * alpha) * res_norm or trial_norm <= cfg.newton_tol:
                break
            alpha *= 0.5
        else:
            raise StepFailure("Newton line search stalled in the rho stage", res_norm)
        r, res, res_norm = trial, trial_res, trial_norm
        iters += 1

    if isinstance(graph, ClampIndicator):
        rho_vals = np.clip(r, graph.a, graph.b)
        xi_vals = (r - rho_vals) / lam
    else:
        rho_vals = r
        xi_vals = yosida_array(graph, lam, r)
    rho_new = ScalarField(grid, rho_vals.reshape(grid.shape)).check_finite()
    xi_new = ScalarField(grid, xi_vals.reshape(grid.shape)).check_finite()
    return rho_new, xi_new, iters, res_norm


def mu_system_coefficients(prev_mu: ScalarField, rho_new: ScalarField,
                           dt_rho: ScalarField, cfg: SolverConfig, laws: Laws):
    """Coefficient fields (a, b_plus, b_minus, kappa_tau at mu_prev) of the
    linearized potential stage; shared with the diagnostics residuals."""
    rv = rho_new.values
    a = cfg.epsilon + 2.0 * laws.coupling.g(rv)
    b = laws.coupling.g_prime(rv) * dt_rho.values
    if cfg.sign_split_reaction:
        b_plus = np.maximum(b, 0.0)
        b_minus = np.maximum(-b, 0.0)
    else:
        b_plus = b
        b_minus = np.zeros_like(b)
    k_lag = laws.mobility.kappa(np.abs(prev_mu.values)) + cfg.mobility_floor_tau
    return a, b_plus, b_minus, k_lag


def step_mu(prev: SimState, rho_new: ScalarField, dt_rho: ScalarField,
            cfg: SolverConfig, laws: Laws):
    """Linearized positivity-preserving potential stage.

    Conjugate gradients on the symmetric positive definite M-matrix system;
    the residual is driven low enough that the iterate inherits the exact
    solution's nonnegativity up to the linear tolerance.
    """
    grid = prev.grid
    a, b_plus, b_minus, k_lag = mu_system_coefficients(
        prev.mu, rho_new, dt_rho, cfg, laws)
    diag = a / cfg.tau + b_plus
    rhs = ((a / cfg.tau + b_minus) * prev.mu.values).ravel()
    shape = grid.shape

    harmonic = cfg.face_average == "harmonic"

    def apply_system(x):
        xs = x.reshape(shape)
        return (diag * xs
                - div_k_grad_arrays(grid, k_lag, xs, harmonic)).ravel()

    # residual target: lambda_min >= min(a)/tau, so this keeps the solution
    # error (2-norm) at or below linear_tol
    tol = cfg.linear_tol * min(1.0, float(a.min()) / cfg.tau)
    max_iter = cfg.linear_max_iter or (10 * grid.num_nodes + 100)
    x, iters, rnorm = _pcg(apply_system, rhs, diag.ravel(),
                           prev.mu.values.ravel().copy(), tol, max_iter)
    if rnorm > tol:
        raise StepFailure("conjugate gradients did not converge in the mu stage",
                          rnorm)
    mu_new = ScalarField(grid, x.reshape(shape)).check_finite()
    return mu_new, iters, rnorm


def _pcg(apply_A, b, diag_precond, x0, tol, max_iter):
    """Jacobi-preconditioned conjugate gradients, deterministic, warm start."""
    x = x0
    r = b - apply_A(x)
    rnorm = float(np.linalg.norm(r))
    if rnorm <= tol:
        return x, 0, rnorm
    z = r / diag_precond
    p = z.copy()
    rz = float(r @ z)
    for k in range(1, max_iter + 1):
        Ap = apply_A(p)
        alpha = rz / float(p @ Ap)
        x = x + alpha * p
        r = r - alpha * Ap
        rnorm = float(np.linalg.norm(r))
        if rnorm <= tol:
            return x, k, rnorm
        z = r / diag_precond
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, max_iter, rnorm


def advance(state: SimState, cfg: SolverConfig, laws: Laws,
            history: Trajectory):
    """One full step: delay lookup, rho stage, mu stage; appends to history."""
    if history.states[-1] is not state:
        raise ValueError("advance expects the trajectory to end at the given state")
    t_next = state.t + cfg.tau
    mu_del = delayed_mu(history, t_next, cfg.tau, history.states[0].mu)
    rho_new, xi_new, n_iters, n_res = step_rho(state, mu_del, cfg, laws)
    dt_rho = ScalarField(state.grid,
                         (rho_new.values - state.rho.values) / cfg.tau)
    mu_new, cg_iters, cg_res = step_mu(state, rho_new, dt_rho, cfg, laws)
    new_state = SimState(t=t_next, mu=mu_new, rho=rho_new, xi=xi_new,
                         dt_rho=dt_rho)
    report = StepReport(
        newton_iters=n_iters, newton_residual=n_res,
        linear_iters=cg_iters, linear_residual=cg_res,
        min_mu=mu_new.min(), max_mu=mu_new.max(),
        rho_range=(rho_new.min(), rho_new.max()),
    )
    history.states.append(new_state)
    history.reports.append(report)
    return new_state, report


def validate_initial_data(mu0: ScalarField, rho0: ScalarField, cfg: SolverConfig,
                          laws: Laws) -> None:
    """Machine check of the data hypotheses before any stepping."""
    if mu0.grid != rho0.grid:
        raise ValidationError("mu0 and rho0 live on different grids")
    mu0.check_finite()
    rho0.check_finite()
    if mu0.min() < 0.0:
        raise ValidationError(
            f"violates (hpzero): mu0 has negative values (min {mu0.min():g})")
    lo, hi = laws.graph.domain
    if rho0.min() < lo or rho0.max() > hi:
        raise ValidationError(
            f"violates (hpzero): rho0 leaves the closed constraint interval "
            f"[{lo:g}, {hi:g}] (range [{rho0.min():g}, {rho0.max():g}])")
    if cfg.n_steps > 0 and cfg.tau > laws.mobility.kappa_sup:
        raise ValidationError(
            f"violates the smallness assumption tau <= kappa_sup: "
            f"tau = {cfg.tau:g}, kappa_sup = {laws.mobility.kappa_sup:g}")


def initial_state(mu0: ScalarField, rho0: ScalarField, cfg: SolverConfig,
                  laws: Laws) -> SimState:
    """Initial snapshot; xi0 realizes the selection hypothesis (hprhozbis)
    through the Yosida value at rho0 (exactly a selection for the clamp graph)."""
    lam = cfg.yosida_lambda
    xi0 = ScalarField(rho0.grid,
                      yosida_array(laws.graph, lam, rho0.values.ravel())
                      .reshape(rho0.grid.shape))
    zeros = field_of(rho0.grid, 0.0)
    return SimState(t=0.0, mu=mu0, rho=rho0, xi=xi0, dt_rho=zeros)


def run(cfg: SolverConfig, laws: Laws, initial) -> Trajectory:
    """Integrate N steps from (mu0, rho0); pure function of its inputs.

    Data hypotheses are rejected before stepping; a stage failure aborts
    with the partial trajectory attached to the exception.
    """
    mu0, rho0 = initial
    validate_initial_data(mu0, rho0, cfg, laws)
    traj = Trajectory([initial_state(mu0, rho0, cfg, laws)], cfg=cfg)
    for _ in range(cfg.n_steps):
        try:
            advance(traj.states[-1], cfg, laws, traj)
        except StepFailure as exc:
            raise SolverFailure(f"run aborted at t = {traj.states[-1].t:g}: {exc}",
                                traj) from exc
    return traj


def run_literal(cfg: SolverConfig, laws: Laws, initial) -> Trajectory:
    """Growing-interval driver: at outer round n, re-solve the first n steps
    from scratch, reading every delayed potential from the previous round's
    trajectory.

    The delay never looks back more than one step, so this reproduces the
    rolling driver bit for bit; it exists as the oracle for that equivalence.
    """
    mu0, rho0 = initial
    validate_initial_data(mu0, rho0, cfg, laws)
    state0 = initial_state(mu0, rho0, cfg, laws)
    prev_round = Trajectory([state0], cfg=cfg)
    for n in range(1, cfg.n_steps + 1):
        current = Trajectory([state0], cfg=cfg)
        for k in range(1, n + 1):
            state = current.states[-1]
            t_next = state.t + cfg.tau
            mu_del = delayed_mu(prev_round, t_next, cfg.tau, mu0)
            rho_new, xi_new, n_iters, n_res = step_rho(state, mu_del, cfg, laws)
            dt_rho = ScalarField(state.grid,
                                 (rho_new.values - state.rho.values) / cfg.tau)
            mu_new, cg_iters, cg_res = step_mu(state, rho_new, dt_rho, cfg, laws)
            current.states.append(SimState(t=t_next, mu=mu_new, rho=rho_new,
                                           xi=xi_new, dt_rho=dt_rho))
            current.reports.append(StepReport(
                newton_iters=n_iters, newton_residual=n_res,
                linear_iters=cg_iters, linear_residual=cg_res,
                min_mu=mu_new.min(), max_mu=mu_new.max(),
                rho_range=(rho_new.min(), rho_new.max())))
        prev_round = current
    return prev_round
