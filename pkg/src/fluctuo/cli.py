"""Command-line interface: every workflow as a reproducible, config-driven run.

Exit codes: 0 on pass, 2 when a run's acceptance-style check fails, 1 on
usage or configuration errors.  Each command prints a machine-readable JSON
summary to stdout and writes artifacts (including the fully resolved config)
under --out only.  FLUCTUO_LOG controls verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .config import SCHEMA_VERSION, RunConfig
from .diagnostics import entropy_estimate_ensemble
from .errors import ConfigurationError, DomainError, MassConservationError
from .grid import Field, field_to_binary, field_to_csv, l1_distance
from .ldp import mc_small_noise, minimal_control, roundtrip_target
from .noise import NoiseScalingEntry, qv_report, scaling_regime_check
from .nonlinearity import EntropyFunction, check_assumptions
from .skeleton import (ControlField, skeleton_entropy_check, solve_skeleton,
                       weak_form_residual)
from .solver import coupled_solve, solve, write_diagnostics_csv

log = logging.getLogger("fluctuo")

_MASS_TOL = 1e-11


def _configure_logging():
    level = os.environ.get("FLUCTUO_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(name)s %(levelname)s %(message)s")


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def _child_seed(base, *branch):
    return int(np.random.SeedSequence([int(base), *map(int, branch)]).generate_state(1)[0])


def _map_ordered(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _write_snapshot(field, path_base, fmt):
    if fmt == "csv":
        path = f"{path_base}.csv"
        field_to_csv(field, path)
    elif fmt == "binary":
        path = f"{path_base}.bin"
        field_to_binary(field, path)
    elif fmt == "json":
        path = f"{path_base}.json"
        with open(path, "w") as fh:
            json.dump({
                "d": field.grid.d, "N": field.grid.N, "L": field.grid.L,
                "gamma": field.gamma, "values": field.values.ravel().tolist(),
            }, fh)
    else:
        raise ConfigurationError(f"unknown snapshot format {fmt!r}")
    return path


def _mass_drift(traj):
    mass = traj.diag["mass_excess"]
    return float(np.max(np.abs(mass - mass[0])) / (1.0 + abs(mass[0])))


# -- commands --------------------------------------------------------------------


def cmd_simulate(cfg, args, out):
    grid = cfg.build_grid()
    spec = cfg.build_spec()
    params = cfg.build_params(grid, args.seed)
    sconf = cfg.build_solver_config()
    initial = cfg.build_initial(grid, spec.gamma)
    traj = solve(initial, spec, params, sconf, T=cfg.run.T,
                 store_every=cfg.run.store_every)
    artifacts = [
        _write_snapshot(traj.initial, os.path.join(out, "state_initial"), args.format),
        _write_snapshot(traj.final, os.path.join(out, "state_final"), args.format),
    ]
    diag_path = os.path.join(out, "diagnostics.csv")
    write_diagnostics_csv(traj, diag_path)
    artifacts.append(diag_path)
    if args.figures:
        from . import plots
        artifacts.append(plots.plot_trajectory(traj, os.path.join(out, "trajectory.png")))
    drift = _mass_drift(traj)
    data = {
        "n_steps": traj.n_steps,
        "dt_effective": traj.dt,
        "mass_drift_rel": drift,
        "min_rho": float(traj.diag["min_rho"].min()),
        "final_entropy": float(traj.diag["entropy"][-1]),
        "clamp_events": int(traj.diag["n_clamped"].sum()),
        "seed": traj.seed,
    }
    return drift <= _MASS_TOL, data, artifacts


def cmd_contract_test(cfg, args, out):
    grid = cfg.build_grid()
    base_spec = cfg.build_spec()
    sconf = cfg.build_solver_config()
    c = cfg.contract
    base_seed = cfg.noise.seed if args.seed is None else args.seed
    m_values = [float(m) for m in c.m_values]

    def run_pair(k):
        from .nonlinearity import NonlinearitySpec
        m = m_values[k % len(m_values)]
        spec = NonlinearitySpec.power_law(m, base_spec.gamma, base_spec.c_nu)
        rng = np.random.default_rng(_child_seed(base_seed, 1, k))
        wiggle = 0.8 + 0.4 * rng.random(2)
        f1 = cfg.build_initial(grid, spec.gamma, "initial")
        f2 = cfg.build_initial(grid, spec.gamma, "initial2")
        f1 = Field(grid, spec.gamma + (f1.values - spec.gamma) * wiggle[0], spec.gamma)
        f2 = Field(grid, spec.gamma + (f2.values - spec.gamma) * wiggle[1], spec.gamma)
        params = cfg.build_params(grid, _child_seed(base_seed, 2, k))
        t1, t2 = coupled_solve(f1, f2, spec, params, sconf, T=cfg.run.T,
                               store_every=cfg.run.store_every)
        d0 = l1_distance(f1, f2)
        sup = max(
            float(np.abs(t1.states[i] - t2.states[i]).sum() * grid.cell_volume)
            for i in range(len(t1.times))
        )
        return m, d0, sup / d0

    rows = _map_ordered(run_pair, range(c.n_pairs), args.threads)
    ratios = [r[2] for r in rows]
    n_within = sum(1 for r in ratios if r <= c.tolerance)
    path = os.path.join(out, "contract_pairs.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pair", "m", "initial_distance", "sup_ratio"])
        for k, (m, d0, ratio) in enumerate(rows):
            w.writerow([k, m, repr(d0), repr(ratio)])
    artifacts = [path]
    if args.figures:
        from . import plots
        artifacts.append(plots.plot_contract(
            ratios, c.tolerance, os.path.join(out, "contract.png")))
    data = {
        "n_pairs": c.n_pairs,
        "max_ratio": max(ratios),
        "tolerance": c.tolerance,
        "n_within": n_within,
        "fraction_within": n_within / c.n_pairs,
    }
    passed = data["fraction_within"] >= c.min_pass_fraction
    return passed, data, artifacts


def cmd_entropy_report(cfg, args, out):
    grid = cfg.build_grid()
    spec = cfg.build_spec()
    sconf = cfg.build_solver_config()
    initial = cfg.build_initial(grid, spec.gamma)
    ent = EntropyFunction(spec)
    e = cfg.entropy
    base_seed = cfg.noise.seed if args.seed is None else args.seed
    levels = [sconf.eps, sconf.eps * e.sweep_factor]
    reports = []
    for li, eps in enumerate(levels):
        from dataclasses import replace
        level_conf = replace(sconf, eps=eps)
        params = cfg.build_params(grid)

        def run_one(i):
            return solve(initial, spec, params, level_conf, T=cfg.run.T,
                         seed=_child_seed(base_seed, li, i),
                         store_every=cfg.run.store_every)

        trajs = _map_ordered(run_one, range(e.ensemble), args.threads)
        reports.append(entropy_estimate_ensemble(
            trajs, params, ent, theta=e.theta, q=e.q,
            divqv_samples=e.divqv_samples))
    fitted = [r.fitted_c for r in reports]
    ratio = max(fitted) / min(fitted)
    path = os.path.join(out, "entropy_report.json")
    with open(path, "w") as fh:
        json.dump({
            "levels": [{"eps": eps, **rep.as_dict()}
                       for eps, rep in zip(levels, reports)],
            "fitted_ratio": ratio,
            "stability_factor": e.stability_factor,
        }, fh, indent=2, default=_json_default)
    artifacts = [path]
    if args.figures:
        from . import plots
        artifacts.append(plots.plot_entropy_budget(
            reports, [f"eps={v:.3g}" for v in levels],
            os.path.join(out, "entropy_budget.png")))
    data = {
        "fitted_c": fitted,
        "fitted_ratio": ratio,
        "ensemble": e.ensemble,
        "qv_levels": [r.qv for r in reports],
    }
    return ratio <= e.stability_factor, data, artifacts


def cmd_noise_qv(cfg, args, out):
    grid = cfg.build_grid()
    params = cfg.build_params(grid, args.seed)
    q = cfg.qv
    rep = qv_report(params, grid, q.n_samples, q.dt)
    path = os.path.join(out, "noise_qv.json")
    with open(path, "w") as fh:
        json.dump(rep, fh, indent=2, default=_json_default)
    artifacts = [path]
    if args.figures:
        from . import plots
        from .noise import quadratic_variation
        qv = quadratic_variation(params, grid, q.n_samples, q.dt)
        artifacts.append(plots.plot_qv(qv.field.values, grid, params.a_norm_sq,
                                       os.path.join(out, "noise_qv.png")))
    value_err = abs(rep["qv_mean"] / rep["qv_expected"] - 1.0)
    data = {**rep, "qv_value_rel_err": value_err}
    passed = rep["qv_spread"] <= q.spread_tol and value_err <= q.value_tol
    return passed, data, artifacts


def _scaling_entries(cfg, args):
    if args.sequence:
        entries = []
        with open(args.sequence, newline="") as fh:
            for row in csv.DictReader(fh):
                entries.append(NoiseScalingEntry(
                    float(row["epsilon"]), float(row["alpha"]),
                    float(row["A"]), int(row["K_a"])))
        return entries
    s = cfg.scaling
    if s.eps_levels:
        if not (len(s.eps_levels) == len(s.alphas) == len(s.A_values)
                == len(s.K_a_values)):
            raise ConfigurationError("[scaling] lists must share one length")
        return [NoiseScalingEntry(float(e), float(a), float(A), int(k))
                for e, a, A, k in zip(s.eps_levels, s.alphas, s.A_values,
                                      s.K_a_values)]
    raise ConfigurationError("scaling-check needs --sequence or [scaling] lists")


def cmd_scaling_check(cfg, args, out):
    d = args.d if args.d is not None else cfg.scaling.d
    entries = _scaling_entries(cfg, args)
    rep = scaling_regime_check(entries, d)
    path = os.path.join(out, "scaling_rows.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epsilon", "alpha", "A", "K_a", "constant_mode",
                    "divergence_cost"])
        for e, cm, dc in zip(rep.entries, rep.constant_mode,
                             rep.divergence_cost):
            w.writerow([e.epsilon, e.alpha, e.A, e.K_a, repr(cm), repr(dc)])
    artifacts = [path]
    if args.figures:
        from . import plots
        artifacts.append(plots.plot_scaling(rep, os.path.join(out, "scaling.png")))
    return rep.status != "fail", rep.as_dict(), artifacts


def _skeleton_control(cfg, grid, T):
    s = cfg.skeleton
    if s.control == "zero":
        return ControlField.zero(grid, T)
    if s.control == "sine":
        g = np.stack([
            s.amplitude * np.sin(np.pi * x / grid.L) for x in grid.coords()
        ])
        return ControlField.constant_in_time(grid, g, T)
    if s.control == "dir":
        return ControlField.from_dir(os.path.join(cfg.base_dir, s.control_path))
    raise ConfigurationError(f"[skeleton] unknown control kind {s.control!r}")


def cmd_skeleton(cfg, args, out):
    grid = cfg.build_grid()
    spec = cfg.build_spec()
    initial = cfg.build_initial(grid, spec.gamma)
    control = _skeleton_control(cfg, grid, cfg.run.T)
    dt = cfg.skeleton.dt or None
    traj = solve_skeleton(initial, spec, control, T=cfg.run.T, dt=dt,
                          store_every=cfg.run.store_every,
                          cfl_safety=cfg.solver.cfl_safety)
    rep = skeleton_entropy_check(traj, control, EntropyFunction(spec))
    residual = weak_form_residual(traj, spec, control, n_tests=4, seed=0)
    diag_path = os.path.join(out, "diagnostics.csv")
    write_diagnostics_csv(traj, diag_path)
    artifacts = [
        diag_path,
        _write_snapshot(traj.final, os.path.join(out, "state_final"), args.format),
    ]
    report_path = os.path.join(out, "skeleton_report.json")
    with open(report_path, "w") as fh:
        json.dump({**rep.as_dict(), "weak_form_residual": residual}, fh, indent=2, default=_json_default)
    artifacts.append(report_path)
    if args.figures:
        from . import plots
        artifacts.append(plots.plot_trajectory(traj, os.path.join(out, "trajectory.png")))
    drift = _mass_drift(traj)
    data = {**rep.as_dict(), "mass_drift_rel": drift,
            "weak_form_residual": residual, "dt_effective": traj.dt}
    return drift <= _MASS_TOL, data, artifacts


def cmd_rate(cfg, args, out):
    grid = cfg.build_grid()
    spec = cfg.build_spec()
    initial = cfg.build_initial(grid, spec.gamma)
    r = cfg.rate
    phi_star = r.phi_star_amplitude * np.cos(np.pi * grid.coords()[0] / grid.L)
    traj, control, half_energy = roundtrip_target(
        initial, spec, phi_star, T=cfg.run.T,
        dt=cfg.solver.dt, store_every=r.store_every)
    ev = minimal_control(traj, spec)
    rel_err = abs(ev.rate / half_energy - 1.0) if half_energy > 0 else 0.0
    density_path = os.path.join(out, "control_energy_density.csv")
    with open(density_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "energy_density"])
        for t, e in zip(ev.times, ev.slice_energy):
            w.writerow([repr(float(t)), repr(float(e))])
    report = {
        "rate": ev.rate,
        "applied_half_energy": half_energy,
        "rel_err": rel_err,
        "residual_max": ev.residual,
        "floor": 1e-10,
        "grid": {"d": grid.d, "N": grid.N, "L": grid.L},
        "control_energy_density": density_path,
    }
    report_path = os.path.join(out, "rate_report.json")
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2, default=_json_default)
    artifacts = [density_path, report_path]
    if args.figures:
        from . import plots
        artifacts.append(plots.plot_energy_density(
            ev.times, ev.slice_energy, os.path.join(out, "energy_density.png")))
    return rel_err <= r.tolerance, report, artifacts


def _mc_entries(cfg, grid):
    m = cfg.mc
    eps_levels = [float(e) for e in m.eps_levels]
    if m.alphas:
        if not (len(m.alphas) == len(eps_levels) == len(m.A_values)
                == len(m.K_a_values)):
            raise ConfigurationError("[mc] lists must share one length")
        return [NoiseScalingEntry(e, float(a), float(A), int(k))
                for e, a, A, k in zip(eps_levels, m.alphas, m.A_values,
                                      m.K_a_values)]
    entries = []
    for eps in eps_levels:
        alpha = min(max(0.55 * eps**0.125, 2.5 * grid.h), 0.95 * grid.L / 4)
        A = min(0.8 * eps**0.125, 0.9)
        entries.append(NoiseScalingEntry(eps, alpha, A, int(np.ceil(1.0 / eps))))
    return entries


def cmd_mc_ldp(cfg, args, out):
    grid = cfg.build_grid()
    spec = cfg.build_spec()
    initial = cfg.build_initial(grid, spec.gamma)
    m = cfg.mc
    phi_star = m.phi_star_amplitude * np.cos(np.pi * grid.coords()[0] / grid.L)
    n_steps = max(1, round(cfg.run.T / cfg.solver.dt))
    dt = cfg.run.T / n_steps
    traj, _, _ = roundtrip_target(initial, spec, phi_star, T=cfg.run.T, dt=dt,
                                  store_every=cfg.run.store_every)
    entries = _mc_entries(cfg, grid)
    base_seed = cfg.noise.seed if args.seed is None else args.seed
    rep = mc_small_noise(initial, traj, spec, entries, n_runs=m.n_runs,
                         tube_radius=m.tube_radius, dt=dt, base_seed=base_seed,
                         cfl_safety=cfg.solver.cfl_safety)
    path = os.path.join(out, "mc_report.json")
    with open(path, "w") as fh:
        json.dump(rep.as_dict(), fh, indent=2, default=_json_default)
    levels_path = os.path.join(out, "mc_levels.csv")
    with open(levels_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epsilon", "n_runs", "hits", "p", "minus_eps_log_p",
                    "lower_bound_only"])
        for lv in rep.levels:
            w.writerow([lv.epsilon, lv.n_runs, lv.hits, repr(lv.p),
                        repr(lv.minus_eps_log_p), lv.lower_bound_only])
    artifacts = [path, levels_path]
    if args.figures:
        from . import plots
        artifacts.append(plots.plot_mc(rep, os.path.join(out, "mc_trend.png")))
    final = rep.levels[-1].minus_eps_log_p
    within_band = (rep.rate / m.rate_band <= final <= rep.rate * m.rate_band
                   if rep.rate > 0 else final == 0.0)
    data = rep.as_dict()
    data["final_vs_rate_band"] = m.rate_band
    passed = rep.trend_increasing and within_band
    return passed, data, artifacts


def cmd_assumptions(cfg, args, out):
    spec = cfg.build_spec()
    a = cfg.assumptions
    xi = np.unique(np.concatenate([
        np.geomspace(1e-6, min(0.1, a.xi_max / 10), a.n_points // 4),
        np.linspace(min(0.1, a.xi_max / 10), a.xi_max, a.n_points),
    ]))
    rep = check_assumptions(spec, xi, threshold=a.threshold)
    path = os.path.join(out, "assumptions.json")
    with open(path, "w") as fh:
        json.dump(rep.as_dict(), fh, indent=2, default=_json_default)
    return rep.passed, rep.as_dict(), [path]


COMMANDS = {
    "simulate": cmd_simulate,
    "contract-test": cmd_contract_test,
    "entropy-report": cmd_entropy_report,
    "noise-qv": cmd_noise_qv,
    "scaling-check": cmd_scaling_check,
    "skeleton": cmd_skeleton,
    "rate": cmd_rate,
    "mc-ldp": cmd_mc_ldp,
    "assumptions": cmd_assumptions,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fluctuo",
        description="Conservative stochastic PDE workflows, config-driven.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=(name != "scaling-check"),
                       help="TOML run configuration")
        p.add_argument("--out", default="out", help="artifact directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured noise seed")
        p.add_argument("--threads", type=int, default=1,
                       help="ensemble parallelism; 1 is the reference mode")
        p.add_argument("--format", choices=("csv", "json", "binary"),
                       default="csv", help="snapshot format")
        p.add_argument("--figures", action="store_true",
                       help="render matplotlib figures alongside the outputs")
        if name == "scaling-check":
            p.add_argument("--d", type=int, default=None, help="dimension")
            p.add_argument("--sequence", default=None,
                           help="CSV of (epsilon, alpha, A, K_a) rows")
    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        if args.config:
            cfg = RunConfig.load(args.config)
        else:
            cfg = RunConfig.parse({})
        os.makedirs(args.out, exist_ok=True)
        passed, data, artifacts = COMMANDS[args.command](cfg, args, args.out)
        resolved = os.path.join(args.out, "resolved_config.toml")
        cfg.emit(resolved)
        artifacts.append(resolved)
        summary = {
            "schema_version": SCHEMA_VERSION,
            "command": args.command,
            "passed": bool(passed),
            "data": data,
            "artifacts": artifacts,
            "threads": args.threads,
        }
        print(json.dumps(summary, indent=2, default=_json_default))
        return 0 if passed else 2
    except (ConfigurationError, DomainError, MassConservationError,
            FileNotFoundError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
