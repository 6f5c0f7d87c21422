"""Command-line front end: simulate, diagnose, study, validate.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 diagnostic violation.  All floating-point output is written with 17
significant digits, and every output directory gets a manifest of content
checksums, so identical runs are identical byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from pathlib import Path

import numpy as np

from .config import (
    Config,
    ConfigError,
    build_run,
    parse_config,
    render_config,
)
from .diagnostics import (
    boundedness_report,
    formulation_residuals,
    mu_energy_ledger,
    rho_energy_ledger,
    series_rows,
)
from .mesh import read_snapshot, write_snapshot  # noqa: F401  (public surface)
from .stepper import (
    SimState,
    SolverFailure,
    Trajectory,
    ValidationError,
    run,
)
from .studies import (
    StudySpec,
    degenerate_demo,
    homogeneous_oracle,
    perturbation_pairs,
    tau_refinement,
)

SERIES_COLUMNS = ("step", "t", "E_mu", "F_rho", "diss_cum", "min_mu", "max_mu",
                  "min_rho", "max_rho", "newton_iters", "cg_iters")

REPORT_COLUMNS = ("step", "t", "E_mu", "diss", "extra", "cross", "mu_energy_resid",
                  "F_rho", "visc_cum", "work_cum", "rho_violation",
                  "min_mu", "max_mu", "res_mu_native", "res_mu_kirchhoff",
                  "res_rho_native", "res_rho_strong")


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def write_series(path, rows, columns=SERIES_COLUMNS) -> None:
    """CSV with a fixed column order and lossless float formatting."""
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in columns))
    Path(path).write_text("\n".join(lines) + "\n")


def write_manifest(outdir) -> Path:
    """Checksum every file in the directory into manifest.txt (sorted)."""
    outdir = Path(outdir)
    lines = []
    for p in sorted(outdir.iterdir()):
        if p.name == "manifest.txt" or p.is_dir():
            continue
        digest = hashlib.sha256(p.read_bytes()).hexdigest()
        lines.append(f"{digest}  {p.name}")
    manifest = outdir / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def simulate_to_dir(config: Config, outdir) -> Trajectory:
    """Run a config and write the canonical artifact set into a directory:
    the rendered config, series.csv, per-step field snapshots at the
    configured stride, and the checksum manifest."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _grid, cfg, laws, initial = build_run(config)
    traj = run(cfg, laws, initial)
    (outdir / "config.txt").write_text(render_config(config))
    write_series(outdir / "series.csv", series_rows(traj, laws))
    stride = config.snapshot_stride
    last = len(traj.states) - 1
    for n, state in enumerate(traj.states):
        if stride and (n % stride == 0 or n == last) or n in (0, last):
            for name, fieldval in (("mu", state.mu), ("rho", state.rho),
                                   ("xi", state.xi)):
                write_snapshot(outdir / f"state_{n:05d}_{name}.txt",
                               fieldval, state.t)
    write_manifest(outdir)
    return traj


def load_trajectory(rundir):
    """Rebuild (trajectory, laws, config) from a simulate output directory.

    Ledgers need every step, so the directory must have been written with
    snapshot_stride = 1.
    """
    rundir = Path(rundir)
    config = parse_config((rundir / "config.txt").read_text())
    _grid, cfg, laws, _initial = build_run(config)
    states = []
    for n in range(config.N + 1):
        paths = {name: rundir / f"state_{n:05d}_{name}.txt"
                 for name in ("mu", "rho", "xi")}
        missing = [p.name for p in paths.values() if not p.exists()]
        if missing:
            raise ConfigError(
                f"trajectory is incomplete (missing {missing[0]}); "
                f"diagnose needs snapshot_stride = 1")
        mu, t = read_snapshot(paths["mu"])
        rho, _ = read_snapshot(paths["rho"])
        xi, _ = read_snapshot(paths["xi"])
        if n == 0:
            dt_rho = rho.copy()
            dt_rho.values[...] = 0.0
        else:
            dt_rho = rho.copy()
            dt_rho.values[...] = (rho.values - states[-1].rho.values) / cfg.tau
        states.append(SimState(t=t, mu=mu, rho=rho, xi=xi, dt_rho=dt_rho))
    return Trajectory(states, cfg=cfg), laws, config


def diagnose_to_report(rundir, report_path) -> list:
    """Compute the full diagnostic report for a stored run; returns the list
    of violated checks (empty when the run is clean)."""
    traj, laws, config = load_trajectory(rundir)
    ledger = mu_energy_ledger(traj, laws)
    rho_led = rho_energy_ledger(traj, laws)
    residuals = formulation_residuals(traj, laws)
    rows = []
    for n, state in enumerate(traj.states):
        rows.append({
            "step": n, "t": state.t,
            "E_mu": ledger.E_mu[n], "diss": ledger.diss[n],
            "extra": ledger.extra[n], "cross": ledger.cross[n],
            "mu_energy_resid": ledger.resid[n],
            "F_rho": rho_led.F_rho[n], "visc_cum": rho_led.visc_cum[n],
            "work_cum": rho_led.work_cum[n],
            "rho_violation": rho_led.violation[n],
            "min_mu": state.mu.min(), "max_mu": state.mu.max(),
            "res_mu_native": residuals.mu_native[n],
            "res_mu_kirchhoff": residuals.mu_kirchhoff[n],
            "res_rho_native": residuals.rho_native[n],
            "res_rho_strong": residuals.rho_strong[n],
        })
    write_series(report_path, rows, REPORT_COLUMNS)

    violations = []
    cfg = traj.cfg
    min_mu = min(s.mu.min() for s in traj.states)
    if min_mu < -10.0 * cfg.linear_tol:
        violations.append(f"positivity: min mu = {min_mu:.3e} "
                          f"below -10*linear_tol")
    solver_band = 10.0 * (cfg.newton_tol + cfg.linear_tol)
    if residuals.mu_native.max() > solver_band:
        violations.append("native potential-stage residual exceeds the solver band")
    if residuals.rho_native.max() > solver_band:
        violations.append("native order-parameter residual exceeds the solver band")
    if np.any(np.isinf(rho_led.F_rho)):
        violations.append("free energy infinite: rho escaped the potential domain")
    for arr in (ledger.E_mu, ledger.diss):
        if not np.all(np.isfinite(arr)):
            violations.append("non-finite ledger entry")
            break
    sup_q, _sup0 = boundedness_report(traj)
    if not np.isfinite(sup_q):
        violations.append("potential unbounded over the run")
    return violations


def run_study(config: Config, outdir) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.txt").write_text(render_config(config))
    if config.study == "tau_refinement":
        spec = StudySpec(base=config, sweep="tau",
                         values=tuple(config.study_values),
                         reference=config.study_reference)
        table = tau_refinement(spec)
        rows = [{"n_steps": int(v), "error": e,
                 "order": o if o is not None else float("nan")}
                for v, e, o in table.rows]
        write_series(outdir / "orders.csv", rows, ("n_steps", "error", "order"))
    elif config.study == "homogeneous_oracle":
        grid, cfg, laws, (mu0, rho0) = build_run(config)
        if np.ptp(mu0.values) or np.ptp(rho0.values):
            raise ConfigError("the oracle study needs spatially constant data")
        report = homogeneous_oracle(grid, cfg, laws,
                                    float(mu0.values.flat[0]),
                                    float(rho0.values.flat[0]))
        rows = [{"t": report.t[i],
                 "mu_stepper": report.mu_stepper[i],
                 "rho_stepper": report.rho_stepper[i],
                 "mu_oracle": report.mu_oracle[i],
                 "rho_oracle": report.rho_oracle[i]}
                for i in range(len(report.t))]
        write_series(outdir / "oracle.csv", rows,
                     ("t", "mu_stepper", "rho_stepper", "mu_oracle", "rho_oracle"))
    elif config.study == "degenerate_demo":
        report = degenerate_demo(config,
                                 step_counts=[int(v) for v in config.study_values])
        rows = []
        for n_steps in report.step_counts:
            for i, t in enumerate(report.sample_times):
                rows.append({"n_steps": n_steps, "t": t,
                             "radius": report.radii[n_steps][i],
                             "radius_control": report.control_radii[n_steps][i],
                             "ktau_vnorm_sup": report.ktau_vnorm_sup[n_steps]})
        write_series(outdir / "degenerate.csv", rows,
                     ("n_steps", "t", "radius", "radius_control", "ktau_vnorm_sup"))
    elif config.study == "perturbation":
        report = perturbation_pairs(config, tuple(config.perturb_amplitude * v
                                                  for v in config.study_values),
                                    seed=config.perturb_seed)
        rows = [{"amplitude": a, "final_metric": m,
                 "growth_rate": r if r is not None else float("nan")}
                for a, m, r in zip(report.amplitudes, report.final_metrics,
                                   report.growth_rates)]
        write_series(outdir / "perturbation.csv", rows,
                     ("amplitude", "final_metric", "growth_rate"))
    else:
        raise ConfigError("config has no study block")
    write_manifest(outdir)


# ---------------------------------------------------------------------------


def _load_config(path) -> Config:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    return parse_config(text)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vchsim",
        description="Desk-scale simulator for a singular/degenerate viscous "
                    "Cahn-Hilliard system with delay-decoupled stepping.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a config and write artifacts")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", required=True)

    p_diag = sub.add_parser("diagnose", help="post-hoc checks on a stored run")
    p_diag.add_argument("--traj", required=True)
    p_diag.add_argument("--out", required=True)

    p_study = sub.add_parser("study", help="run the study block of a config")
    p_study.add_argument("--spec", required=True)
    p_study.add_argument("--out", required=True)

    p_val = sub.add_parser("validate", help="parse and hypothesis-check only")
    p_val.add_argument("--config", required=True)

    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            config = _load_config(args.config)
            simulate_to_dir(config, args.out)
        elif args.command == "validate":
            config = _load_config(args.config)
            build_run(config)  # materializes laws and data checks
            print("config ok")
        elif args.command == "study":
            config = _load_config(args.spec)
            run_study(config, args.out)
        elif args.command == "diagnose":
            violations = diagnose_to_report(args.traj, args.out)
            if violations:
                for v in violations:
                    print(f"violation: {v}", file=sys.stderr)
                return 4
    except (ConfigError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
