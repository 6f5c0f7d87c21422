"""Post-hoc quantitative checks on trajectories.

The continuous theory controls the solution through a handful of energy
and dissipation estimates, a positivity/boundedness argument, and (for
constant mobility) a contraction of a rescaled potential variable.  This
module recasts each of these as a discrete, computable quantity:

* exact identities where the scheme provides them (weighted potential
  energy plus cumulative dissipation in the decoupled case),
* one-sided inequalities with explicit tolerances,
* residuals of both discrete formulations (the scheme's native one, which
  must sit at the solver tolerance, and the conservative Kirchhoff form,
  whose gap measures the first-order formulation error),
* the two-run contraction series in the rescaled variable z = mu/alpha(rho)
  with alpha(r) = (eps + 2 g(r))^(-1/2).

Everything here is pure post-processing over immutable trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constitutive import (
    ClampIndicator,
    K_tau_array,
    Laws,
    LogGraph,
    f_total,
)
from .mesh import (
    ScalarField,
    dirichlet_energy,
    div_k_grad_arrays,
    field_of,
    h1_seminorm_sq,
    laplacian_matrix,
)
from .stepper import Trajectory, delayed_mu, mu_system_coefficients


def _cumsum(values: np.ndarray) -> np.ndarray:
    # explicit running sum so cumulative columns match per-step sums bit for bit
    out = np.empty_like(values)
    acc = 0.0
    for i, v in enumerate(values):
        acc += v
        out[i] = acc
    return out


# ---------------------------------------------------------------------------
# energy ledgers


@dataclass
class EnergyLedger:
    """Per-step potential-energy bookkeeping.

    ``E_mu[n]`` is the weighted energy (1/2) int (eps + 2 g(rho)) mu^2 at step
    n; ``diss`` the face dissipation tau * sum kappa_tau |grad mu|^2 of that
    step (zero at n = 0); ``extra`` the backward-Euler over-dissipation
    (1/2) int a |mu^n - mu^(n-1)|^2; ``cross`` collects the discrete coupling
    terms; ``resid = dE + diss - cross`` is nonpositive up to solver noise.
    """

    t: np.ndarray
    E_mu: np.ndarray
    diss: np.ndarray
    extra: np.ndarray
    cross: np.ndarray
    resid: np.ndarray
    diss_cum: np.ndarray
    extra_cum: np.ndarray
    cross_cum: np.ndarray


def mu_energy_ledger(traj: Trajectory, laws: Laws) -> EnergyLedger:
    cfg = traj.cfg
    grid = traj.grid
    vol = grid.cell_volume
    eps = cfg.epsilon
    n_rows = len(traj.states)
    E = np.zeros(n_rows)
    diss = np.zeros(n_rows)
    extra = np.zeros(n_rows)
    cross = np.zeros(n_rows)
    resid = np.zeros(n_rows)

    def weight(state):
        return eps + 2.0 * laws.coupling.g(state.rho.values)

    E[0] = 0.5 * vol * float(np.sum(weight(traj.states[0]) * traj.states[0].mu.values ** 2))
    for n in range(1, n_rows):
        prev, cur = traj.states[n - 1], traj.states[n]
        a_cur = weight(cur)
        a_prev = weight(prev)
        E[n] = 0.5 * vol * float(np.sum(a_cur * cur.mu.values ** 2))
        _, b_plus, b_minus, k_lag = mu_system_coefficients(
            prev.mu, cur.rho, cur.dt_rho, cfg, laws)
        diss[n] = cfg.tau * dirichlet_energy(grid, ScalarField(grid, k_lag),
                                             cur.mu,
                                             cfg.face_average == "harmonic")
        dmu = cur.mu.values - prev.mu.values
        extra[n] = 0.5 * vol * float(np.sum(a_cur * dmu ** 2))
        cross[n] = (0.5 * vol * float(np.sum((a_cur - a_prev) * prev.mu.values ** 2))
                    - cfg.tau * vol * float(np.sum(
                        (b_plus * cur.mu.values - b_minus * prev.mu.values)
                        * cur.mu.values)))
        resid[n] = E[n] - E[n - 1] + diss[n] - cross[n]
    return EnergyLedger(
        t=traj.times(), E_mu=E, diss=diss, extra=extra, cross=cross,
        resid=resid, diss_cum=_cumsum(diss), extra_cum=_cumsum(extra),
        cross_cum=_cumsum(cross))


@dataclass
class RhoLedger:
    """Free-energy side of the order parameter.

    ``F_rho[n] = (1/2)|grad rho|^2 + int f(rho)`` (infinite if rho escaped
    the potential domain), ``visc`` the viscous dissipation
    delta * tau * int |dt_rho|^2 of the step, ``work`` the coupling work
    tau * int g'(rho) mu_delayed dt_rho, and ``violation`` the running
    defect of the one-sided energy inequality (nonpositive when the
    dissipation inequality holds, small positive values bounded by the
    first-order formulation gap otherwise).
    """

    t: np.ndarray
    F_rho: np.ndarray
    visc: np.ndarray
    work: np.ndarray
    visc_cum: np.ndarray
    work_cum: np.ndarray
    violation: np.ndarray
    f1_integral: np.ndarray


def rho_energy_ledger(traj: Trajectory, laws: Laws) -> RhoLedger:
    cfg = traj.cfg
    grid = traj.grid
    vol = grid.cell_volume
    mu0 = traj.states[0].mu
    n_rows = len(traj.states)
    F = np.zeros(n_rows)
    visc = np.zeros(n_rows)
    work = np.zeros(n_rows)
    f1_int = np.zeros(n_rows)

    def free_energy(state):
        fvals = f_total(laws.potential, state.rho.values)
        f1vals = laws.potential.f1_value(state.rho.values)
        if np.any(np.isinf(fvals)):
            return np.inf, np.inf
        return (0.5 * h1_seminorm_sq(grid, state.rho) + vol * float(np.sum(fvals)),
                vol * float(np.sum(f1vals)))

    F[0], f1_int[0] = free_energy(traj.states[0])
    for n in range(1, n_rows):
        cur = traj.states[n]
        F[n], f1_int[n] = free_energy(cur)
        visc[n] = cfg.delta * cfg.tau * vol * float(np.sum(cur.dt_rho.values ** 2))
        mu_del = delayed_mu(traj, cur.t, cfg.tau, mu0)
        work[n] = cfg.tau * vol * float(np.sum(
            laws.coupling.g_prime(cur.rho.values) * mu_del.values
            * cur.dt_rho.values))
    visc_cum = _cumsum(visc)
    work_cum = _cumsum(work)
    violation = F + visc_cum - F[0] - work_cum
    return RhoLedger(t=traj.times(), F_rho=F, visc=visc, work=work,
                     visc_cum=visc_cum, work_cum=work_cum,
                     violation=violation, f1_integral=f1_int)


def boundedness_report(traj: Trajectory, mu0: ScalarField = None) -> tuple:
    """(sup over all steps and nodes of mu, sup of the initial datum)."""
    if mu0 is None:
        mu0 = traj.states[0].mu
    sup_q = max(s.mu.max() for s in traj.states)
    return sup_q, mu0.max()


# ---------------------------------------------------------------------------
# formulation residuals


@dataclass
class ResidualRows:
    """Max-norm residuals of the discrete equation forms, step by step.

    ``mu_native`` / ``rho_native`` are the forms the solvers drove to zero
    and must sit at the solver tolerances; ``mu_kirchhoff`` tests the
    conservative form (difference of the weighted potential, Kirchhoff flux
    of the current step, unsplit reaction) against localized bump fields and
    ``rho_strong`` evaluates the inclusion at the committed pair -- both
    measure the first-order formulation gap.
    """

    t: np.ndarray
    mu_native: np.ndarray
    mu_kirchhoff: np.ndarray
    rho_native: np.ndarray
    rho_strong: np.ndarray


def _bump_fields(grid) -> np.ndarray:
    """Discrete hat-like test bumps at every 4th node, unit mass each."""
    nn = grid.num_nodes
    lap = laplacian_matrix(grid)  # reuse the stencil's sparsity to find neighbors
    bumps = []
    for j in range(0, nn, 4):
        v = np.zeros(nn)
        v[j] = 1.0
        row = lap[j].tocoo()
        for col in row.col:
            if col != j:
                v[col] = 0.5
        v /= v.sum() * grid.cell_volume
        bumps.append(v)
    return np.array(bumps)


def formulation_residuals(traj: Trajectory, laws: Laws) -> ResidualRows:
    cfg = traj.cfg
    grid = traj.grid
    vol = grid.cell_volume
    L = laplacian_matrix(grid)
    mu0 = traj.states[0].mu
    graph = laws.graph
    lam = cfg.yosida_lambda
    eps = cfg.epsilon
    bumps = _bump_fields(grid)
    n_rows = len(traj.states)
    out = {k: np.zeros(n_rows) for k in
           ("mu_native", "mu_kirchhoff", "rho_native", "rho_strong")}

    for n in range(1, n_rows):
        prev, cur = traj.states[n - 1], traj.states[n]
        mu_del = delayed_mu(traj, cur.t, cfg.tau, mu0)
        mu_p, mu_c = prev.mu.values, cur.mu.values
        rho_c = cur.rho.values

        # native potential stage (lagged floored mobility, split reaction)
        a, b_plus, b_minus, k_lag = mu_system_coefficients(
            prev.mu, cur.rho, cur.dt_rho, cfg, laws)
        res_mu = (a * (mu_c - mu_p) / cfg.tau + b_plus * mu_c - b_minus * mu_p
                  - div_k_grad_arrays(grid, k_lag, mu_c,
                                      cfg.face_average == "harmonic"))
        out["mu_native"][n] = float(np.max(np.abs(res_mu)))

        # conservative Kirchhoff form tested against bump fields
        a_prev = eps + 2.0 * laws.coupling.g(prev.rho.values)
        dt_weighted = (a * mu_c - a_prev * mu_p) / cfg.tau
        coupling_term = mu_c * laws.coupling.g_prime(rho_c) * cur.dt_rho.values
        ktau_c = K_tau_array(laws.mobility, cfg.mobility_floor_tau, mu_c)
        bulk = (dt_weighted - coupling_term).ravel()
        weak = []
        kfield = ScalarField(grid, ktau_c)
        ones = field_of(grid, 1.0)
        for v in bumps:
            vf = ScalarField(grid, v.reshape(grid.shape))
            weak.append(vol * float(bulk @ v)
                        + _dirichlet_form(grid, ones, kfield, vf))
        out["mu_kirchhoff"][n] = float(np.max(np.abs(weak))) if weak else 0.0

        # native order-parameter stage: for the clamp graph the committed
        # pair is the resolvent projection of the Newton iterate, so the
        # solved equation is recovered at rho + lam*xi
        if isinstance(graph, ClampIndicator):
            rr = (rho_c + lam * cur.xi.values).ravel()
        else:
            rr = rho_c.ravel()
        res_rho = (cfg.delta * (rr - prev.rho.values.ravel()) / cfg.tau
                   - L @ rr + cur.xi.values.ravel()
                   + laws.potential.f2_prime(rr)
                   - mu_del.values.ravel() * laws.coupling.g_prime(rr))
        out["rho_native"][n] = float(np.max(np.abs(res_rho)))

        # strong inclusion at the committed pair; for the log graph the
        # committed selection is the Yosida value, so this shows the O(lam) gap
        rc = rho_c.ravel()
        if isinstance(graph, LogGraph):
            inside = (rc > graph.a) & (rc < graph.b)
            xi_strong = np.where(inside, graph.value(np.clip(
                rc, graph.a + 1e-300, graph.b - 1e-300)), np.inf)
        else:
            xi_strong = cur.xi.values.ravel()
        res_strong = (cfg.delta * (rc - prev.rho.values.ravel()) / cfg.tau
                      - L @ rc + xi_strong
                      + laws.potential.f2_prime(rc)
                      - mu_del.values.ravel() * laws.coupling.g_prime(rc))
        out["rho_strong"][n] = float(np.max(np.abs(res_strong)))

    return ResidualRows(t=traj.times(), mu_native=out["mu_native"],
                        mu_kirchhoff=out["mu_kirchhoff"],
                        rho_native=out["rho_native"],
                        rho_strong=out["rho_strong"])


def _dirichlet_form(grid, k: ScalarField, u: ScalarField, v: ScalarField) -> float:
    """Bilinear face form sum_faces k_face (du/h)(dv/h) h^dim."""
    h = grid.h
    total = 0.0
    for axis in range(grid.dim):
        du = np.diff(u.values, axis=axis)
        dv = np.diff(v.values, axis=axis)
        kslices = [slice(None)] * grid.dim
        kslices[axis] = slice(1, None)
        k_hi = k.values[tuple(kslices)]
        kslices[axis] = slice(None, -1)
        k_lo = k.values[tuple(kslices)]
        total += float(np.sum(0.5 * (k_hi + k_lo) * du * dv)) / h ** 2
    return grid.cell_volume * total


# ---------------------------------------------------------------------------
# contraction metric


@dataclass
class ContractionSeries:
    """Squared gaps of two runs in the rescaled variables, step by step.

    ``z = mu * sqrt(eps + 2 g(rho))`` is the variable in which the
    constant-mobility uniqueness argument contracts; ``backed`` records
    whether the mobility actually is constant (otherwise the series is
    still computable but has no theoretical backing).
    """

    t: np.ndarray
    z_gap: np.ndarray
    rho_gap: np.ndarray
    backed: bool

    @property
    def total(self) -> np.ndarray:
        return self.z_gap + self.rho_gap

    def growth_rate(self, tau: float):
        """Largest per-step exponential rate: max ln(m_n/m_(n-1))/tau over
        steps with positive previous metric; None if no step qualifies."""
        m = self.total
        rates = [np.log(m[n] / m[n - 1]) / tau
                 for n in range(1, len(m)) if m[n - 1] > 0 and m[n] > 0]
        return max(rates) if rates else None


def contraction_metric(trajA: Trajectory, trajB: Trajectory,
                       laws: Laws) -> ContractionSeries:
    if trajA.grid != trajB.grid:
        raise ValueError("trajectories live on different grids")
    if len(trajA) != len(trajB) or trajA.cfg != trajB.cfg:
        raise ValueError("trajectories were produced by different configurations")
    cfg = trajA.cfg
    vol = trajA.grid.cell_volume
    eps = cfg.epsilon
    n_rows = len(trajA.states)
    z_gap = np.zeros(n_rows)
    rho_gap = np.zeros(n_rows)
    for n, (sa, sb) in enumerate(zip(trajA.states, trajB.states)):
        za = sa.mu.values * np.sqrt(eps + 2.0 * laws.coupling.g(sa.rho.values))
        zb = sb.mu.values * np.sqrt(eps + 2.0 * laws.coupling.g(sb.rho.values))
        z_gap[n] = vol * float(np.sum((za - zb) ** 2))
        rho_gap[n] = vol * float(np.sum((sa.rho.values - sb.rho.values) ** 2))
    return ContractionSeries(t=trajA.times(), z_gap=z_gap, rho_gap=rho_gap,
                             backed=laws.mobility.kind == "constant")


# ---------------------------------------------------------------------------
# run summary for the series file


def series_rows(traj: Trajectory, laws: Laws) -> list:
    """Per-step rows for series.csv: energies, dissipation, ranges, iteration
    counts, in the documented column order."""
    ledger = mu_energy_ledger(traj, laws)
    rho_led = rho_energy_ledger(traj, laws)
    rows = []
    for n, state in enumerate(traj.states):
        rep = traj.reports[n - 1] if n >= 1 else None
        rows.append({
            "step": n,
            "t": state.t,
            "E_mu": ledger.E_mu[n],
            "F_rho": rho_led.F_rho[n],
            "diss_cum": ledger.diss_cum[n],
            "min_mu": state.mu.min(),
            "max_mu": state.mu.max(),
            "min_rho": state.rho.min(),
            "max_rho": state.rho.max(),
            "newton_iters": rep.newton_iters if rep else 0,
            "cg_iters": rep.linear_iters if rep else 0,
        })
    return rows
