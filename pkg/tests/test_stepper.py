import math

import numpy as np
import pytest

from vchsim.config import Config, build_run
from vchsim.constitutive import (
    Laws,
    make_clamp_potential,
    make_constant_coupling,
    make_constant_mobility,
    make_linear_coupling,
    make_log_potential,
)
from vchsim.mesh import Grid, field_of
from vchsim.stepper import (
    SimState,
    SolverConfig,
    Trajectory,
    ValidationError,
    advance,
    delayed_mu,
    initial_state,
    run,
    run_literal,
    step_mu,
    step_rho,
)


def make_laws(potential="clamp", alpha1=0.5, alpha2=2.0, coupling="linear",
              g0=0.0, kappa0=1.0, epsilon=1.0):
    pot = (make_clamp_potential(alpha2) if potential == "clamp"
           else make_log_potential(alpha1, alpha2))
    cpl = (make_linear_coupling(epsilon) if coupling == "linear"
           else make_constant_coupling(g0, epsilon))
    return Laws(pot, cpl, make_constant_mobility(kappa0))


def states_equal(a, b):
    return (np.array_equal(a.mu.values, b.mu.values)
            and np.array_equal(a.rho.values, b.rho.values)
            and np.array_equal(a.xi.values, b.xi.values))


class TestSolverConfig:
    def test_tau_derived_from_T_and_N(self):
        cfg = SolverConfig(T=1.0, n_steps=8)
        assert cfg.tau == 0.125
        assert cfg.yosida_lambda == 0.125
        assert cfg.mobility_floor_tau == 0.125

    def test_inconsistent_tau_rejected(self):
        with pytest.raises(ValidationError, match="tau = T/N"):
            SolverConfig(T=1.0, n_steps=7, tau=0.2)

    def test_zero_steps_requires_zero_time(self):
        with pytest.raises(ValidationError):
            SolverConfig(T=1.0, n_steps=0)
        cfg = SolverConfig(T=0.0, n_steps=0)
        assert cfg.tau == 0.0

    def test_bad_tolerances_rejected(self):
        with pytest.raises(ValidationError):
            SolverConfig(T=1.0, n_steps=4, newton_tol=0.0)


class TestDelayedMu:
    def setup_method(self):
        self.grid = Grid(1, 8, 1.0)
        self.cfg = SolverConfig(T=1.0, n_steps=4)
        self.laws = make_laws(coupling="constant")
        self.mu0 = field_of(self.grid, 1.0)

    def _history(self, n_states):
        rho0 = field_of(self.grid, 0.5)
        traj = Trajectory([initial_state(self.mu0, rho0, self.cfg, self.laws)],
                          cfg=self.cfg)
        for k in range(1, n_states):
            prev = traj.states[-1]
            mu_k = field_of(self.grid, 1.0 + k)
            traj.states.append(SimState(t=k * self.cfg.tau, mu=mu_k,
                                        rho=prev.rho, xi=prev.xi,
                                        dt_rho=prev.dt_rho))
        return traj

    def test_before_first_delay_returns_initial(self):
        traj = self._history(3)
        tau = self.cfg.tau
        assert delayed_mu(traj, tau / 2, tau, self.mu0) is self.mu0
        # the tie at t == tau resolves to the initial datum
        assert delayed_mu(traj, tau, tau, self.mu0) is self.mu0

    def test_shifts_by_one_step(self):
        traj = self._history(4)
        tau = self.cfg.tau
        out = delayed_mu(traj, 3 * tau, tau, self.mu0)
        assert out is traj.states[2].mu

    def test_locality(self):
        # two histories agreeing up to t - tau give the same answer
        a = self._history(4)
        b = self._history(4)
        b.states[3] = SimState(t=b.states[3].t, mu=field_of(self.grid, 99.0),
                               rho=b.states[3].rho, xi=b.states[3].xi,
                               dt_rho=b.states[3].dt_rho)
        tau = self.cfg.tau
        va = delayed_mu(a, 3 * tau, tau, self.mu0)
        vb = delayed_mu(b, 3 * tau, tau, self.mu0)
        assert np.array_equal(va.values, vb.values)

    def test_missing_sample_is_an_error(self):
        traj = self._history(2)
        with pytest.raises(KeyError):
            delayed_mu(traj, 10 * self.cfg.tau, self.cfg.tau, self.mu0)


class TestStepRho:
    def test_stationary_interior_state(self):
        # all forcings vanish: pi = 0, mu_del = 0, graph inactive inside
        grid = Grid(1, 12, 1.0)
        laws = make_laws(potential="clamp", alpha2=0.0, coupling="linear")
        cfg = SolverConfig(T=1.0, n_steps=10)
        prev = initial_state(field_of(grid, 0.0), field_of(grid, 0.5), cfg, laws)
        rho_new, xi_new, iters, _ = step_rho(prev, field_of(grid, 0.0), cfg, laws)
        assert np.array_equal(rho_new.values, prev.rho.values)
        assert np.all(xi_new.values == 0.0)
        assert iters == 0

    def test_constant_data_matches_scalar_bisection_oracle(self):
        # oracle: backward-Euler scalar equation with the Yosida term built
        # from nested bisections, nothing shared with the module under test
        alpha1, alpha2, delta, tau, lam = 0.5, 2.0, 1.0, 0.05, 0.01
        mu_val, rho_prev_val = 0.8, 0.45

        def beta(r):
            return alpha1 * math.log(r / (1.0 - r))

        def resolvent_oracle(lam_, y):
            lo, hi = 1e-15, 1.0 - 1e-15
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if mid + lam_ * beta(mid) > y:
                    hi = mid
                else:
                    lo = mid
            return 0.5 * (lo + hi)

        def yosida_oracle(lam_, r):
            return (r - resolvent_oracle(lam_, r)) / lam_

        def scheme_residual(r):
            pi = alpha2 * (1.0 - 2.0 * r)
            return (delta * (r - rho_prev_val) / tau + yosida_oracle(lam, r)
                    + pi - mu_val * 1.0)  # g'(r) = 1 in the interior

        lo, hi = -1.0, 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if scheme_residual(mid) > 0:
                hi = mid
            else:
                lo = mid
        oracle_rho = 0.5 * (lo + hi)

        grid = Grid(1, 8, 1.0)
        laws = make_laws(potential="log", alpha1=alpha1, alpha2=alpha2)
        cfg = SolverConfig(T=20 * tau, n_steps=20, yosida_lambda=lam)
        prev = initial_state(field_of(grid, mu_val),
                             field_of(grid, rho_prev_val), cfg, laws)
        rho_new, _, _, _ = step_rho(prev, field_of(grid, mu_val), cfg, laws)
        assert np.max(np.abs(rho_new.values - oracle_rho)) <= 1e-9

    def test_saturation_pins_rho_and_sign_of_xi(self):
        grid = Grid(1, 12, 1.0)
        laws = make_laws(potential="clamp", alpha2=0.0, coupling="linear")
        cfg = SolverConfig(T=1.0, n_steps=4)
        prev = initial_state(field_of(grid, 0.0), field_of(grid, 0.9), cfg, laws)
        rho_new, xi_new, _, _ = step_rho(prev, field_of(grid, 50.0), cfg, laws)
        assert np.all(rho_new.values == 1.0)
        assert np.all(xi_new.values >= 0.0)


class TestStepMu:
    def test_zero_field_stays_zero(self):
        grid = Grid(1, 16, 1.0)
        laws = make_laws()
        cfg = SolverConfig(T=1.0, n_steps=8)
        prev = initial_state(field_of(grid, 0.0), field_of(grid, 0.5), cfg, laws)
        mu_new, iters, _ = step_mu(prev, prev.rho, prev.dt_rho, cfg, laws)
        assert np.all(mu_new.values == 0.0)
        assert iters == 0

    def test_eigenvector_resolvent_formula(self):
        # closed form: the cosine mode is an eigenvector of the scheme matrix
        grid = Grid(1, 32, 1.0)
        g0, kappa0, eps = 0.4, 1.3, 1.0
        laws = make_laws(coupling="constant", g0=g0, kappa0=kappa0)
        cfg = SolverConfig(T=1.0, n_steps=16, mobility_floor_tau=0.0)
        x = grid.coordinates()
        c, A = 1.0, 0.5
        mu_prev = field_of(grid, c + A * np.cos(np.pi * x))
        prev = initial_state(mu_prev, field_of(grid, 0.5), cfg, laws)
        mu_new, _, _ = step_mu(prev, prev.rho, prev.dt_rho, cfg, laws)
        lam_h = (2.0 / grid.h ** 2) * (1.0 - np.cos(np.pi * grid.h))
        a = eps + 2.0 * g0
        expected = c + A * np.cos(np.pi * x) / (1.0 + cfg.tau * kappa0 * lam_h / a)
        assert np.max(np.abs(mu_new.values - expected)) <= 1e-9

    @pytest.mark.parametrize("dt_rho_value", [0.8, -0.8])
    def test_spatially_constant_reaction_split(self, dt_rho_value):
        grid = Grid(1, 8, 1.0)
        laws = make_laws(coupling="linear")
        cfg = SolverConfig(T=1.0, n_steps=10)
        mu_prev_val, rho_val = 0.7, 0.5
        prev = initial_state(field_of(grid, mu_prev_val),
                             field_of(grid, rho_val), cfg, laws)
        dt_rho = field_of(grid, dt_rho_value)
        mu_new, _, _ = step_mu(prev, prev.rho, dt_rho, cfg, laws)
        a = 1.0 + 2.0 * rho_val
        b = 1.0 * dt_rho_value  # g'(rho) = 1 in the interior
        b_plus, b_minus = max(b, 0.0), max(-b, 0.0)
        expected = mu_prev_val * (a / cfg.tau + b_minus) / (a / cfg.tau + b_plus)
        assert np.max(np.abs(mu_new.values - expected)) <= 1e-12


def equilibrium_setup(n=12):
    grid = Grid(1, n, 1.0)
    laws = make_laws(potential="clamp", alpha2=0.0, coupling="constant", g0=0.2)
    cfg = SolverConfig(T=1.0, n_steps=8)
    initial = (field_of(grid, 0.8), field_of(grid, 0.5))
    return grid, cfg, laws, initial


class TestAdvanceAndRun:
    def test_equilibrium_state_only_advances_time(self):
        _, cfg, laws, initial = equilibrium_setup()
        traj = run(cfg, laws, initial)
        for state in traj.states[1:]:
            assert states_equal(state, traj.states[0])
        assert traj.states[-1].t == pytest.approx(1.0, abs=1e-12)

    def test_deterministic_pipeline(self):
        c = Config(dim=1, n=16, T=0.5, N=6, potential="log",
                   mu0=("bump", 0.5, 0.3, 1.0), rho0=("cosine", 0.5, 0.2))
        _, cfg, laws, initial = build_run(c)
        t1 = run(cfg, laws, initial)
        t2 = run(cfg, laws, initial)
        assert all(states_equal(a, b) for a, b in zip(t1.states, t2.states))

    def test_run_equals_composed_advances(self):
        c = Config(dim=1, n=16, T=0.5, N=4, potential="clamp",
                   mu0=("cosine", 1.0, 0.5), rho0=("cosine", 0.5, 0.2))
        _, cfg, laws, initial = build_run(c)
        whole = run(cfg, laws, initial)
        from vchsim.stepper import initial_state as init_state
        manual = Trajectory([init_state(initial[0], initial[1], cfg, laws)],
                            cfg=cfg)
        for _ in range(cfg.n_steps):
            advance(manual.states[-1], cfg, laws, manual)
        assert all(states_equal(a, b)
                   for a, b in zip(whole.states, manual.states))

    def test_zero_steps_returns_initial_only(self):
        grid = Grid(1, 8, 1.0)
        laws = make_laws()
        cfg = SolverConfig(T=0.0, n_steps=0)
        traj = run(cfg, laws, (field_of(grid, 1.0), field_of(grid, 0.5)))
        assert len(traj) == 1
        assert traj.states[0].t == 0.0

    def test_eigenmode_product_formula_over_run(self):
        grid = Grid(1, 32, 1.0)
        g0, kappa0 = 0.4, 1.3
        laws = make_laws(potential="clamp", alpha2=0.0, coupling="constant",
                         g0=g0, kappa0=kappa0)
        N = 16
        cfg = SolverConfig(T=0.5, n_steps=N, mobility_floor_tau=0.0)
        x = grid.coordinates()
        c, A = 1.0, 0.5
        mu0 = field_of(grid, c + A * np.cos(np.pi * x))
        traj = run(cfg, laws, (mu0, field_of(grid, 0.5)))
        lam_h = (2.0 / grid.h ** 2) * (1.0 - np.cos(np.pi * grid.h))
        a = 1.0 + 2.0 * g0
        factor = (1.0 + cfg.tau * kappa0 * lam_h / a) ** (-N)
        expected = c + A * np.cos(np.pi * x) * factor
        assert np.max(np.abs(traj.states[-1].mu.values - expected)) <= 1e-8

    def test_invalid_data_rejected(self):
        grid = Grid(1, 8, 1.0)
        laws = make_laws()
        cfg = SolverConfig(T=1.0, n_steps=4)
        with pytest.raises(ValidationError, match="hpzero"):
            run(cfg, laws, (field_of(grid, -0.5), field_of(grid, 0.5)))
        with pytest.raises(ValidationError, match="hpzero"):
            run(cfg, laws, (field_of(grid, 1.0), field_of(grid, 1.5)))

    def test_step_bound_against_mobility_ceiling(self):
        grid = Grid(1, 8, 1.0)
        laws = make_laws(kappa0=0.05)
        cfg = SolverConfig(T=1.0, n_steps=4)  # tau = 0.25 > kappa_sup
        with pytest.raises(ValidationError, match="kappa"):
            run(cfg, laws, (field_of(grid, 1.0), field_of(grid, 0.5)))

    def test_states_are_frozen(self):
        _, cfg, laws, initial = equilibrium_setup()
        traj = run(cfg, laws, initial)
        with pytest.raises(ValueError):
            traj.states[1].mu.values[0] = 99.0


class TestSchemeInvariants:
    def test_positivity_randomized(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            c = Config(
                dim=1, n=int(rng.integers(8, 33)), T=0.5,
                N=int(rng.integers(5, 41)),
                potential=str(rng.choice(["clamp", "log"])),
                mobility=str(rng.choice(["constant", "tanhpow"])),
                alpha2=float(rng.uniform(0.0, 3.0)),
                mu0=("bump", 0.5, 0.3, float(rng.uniform(0.1, 2.0))),
                rho0=("cosine", 0.5, float(rng.uniform(0.0, 0.3))))
            _, cfg, laws, initial = build_run(c)
            traj = run(cfg, laws, initial)
            assert min(s.mu.min() for s in traj.states) >= -1e-10

    def test_clamp_constraint_exact_with_sign_conditions(self):
        c = Config(dim=1, n=24, T=0.5, N=20, potential="clamp", alpha2=2.0,
                   mu0=("bump", 0.5, 0.3, 2.0), rho0=("cosine", 0.5, 0.45))
        _, cfg, laws, initial = build_run(c)
        traj = run(cfg, laws, initial)
        saturated = False
        for state in traj.states[1:]:
            rho, xi = state.rho.values, state.xi.values
            assert np.all((rho >= 0.0) & (rho <= 1.0))
            interior = (rho > 0.0) & (rho < 1.0)
            assert np.all(xi[interior] == 0.0)
            assert np.all(xi[rho == 1.0] >= 0.0)
            assert np.all(xi[rho == 0.0] <= 0.0)
            saturated = saturated or np.any(rho == 1.0) or np.any(rho == 0.0)
        assert saturated  # the forcing must actually exercise the constraint

    def test_rolling_equals_literal_growing_intervals(self):
        c = Config(dim=1, n=16, T=0.25, N=8, potential="log",
                   mu0=("bump", 0.5, 0.4, 1.0), rho0=("cosine", 0.5, 0.2))
        _, cfg, laws, initial = build_run(c)
        rolling = run(cfg, laws, initial)
        literal = run_literal(cfg, laws, initial)
        assert len(rolling) == len(literal)
        for a, b in zip(rolling.states, literal.states):
            assert states_equal(a, b)
            assert np.array_equal(a.dt_rho.values, b.dt_rho.values)
