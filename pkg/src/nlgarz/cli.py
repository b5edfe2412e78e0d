"""Command-line entry point ``nlgarz``.

Subcommands: ``check``, ``run``, ``picard``, ``sweep-eps``, ``sweep-mesh``,
``compare-schemes``. Each one writes CSV/JSON/gnuplot artifacts into its
output directory and prints a one-line PASS/FAIL summary against the
``[accept]`` thresholds of the scenario.

Exit codes: 0 ok, 1 assumption violated, 2 parse error, 3 blow-up,
4 CFL/ordering, 5 no contraction.
"""

import argparse
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .config import load_scenario, shipped_path, shipped_scenarios
from .diagnostics import (convergence_table, fit_oleinik_bound, fit_overshoot_constant,
                          oleinik_monitor, rho_l1, slope_constant, tv_bound, xi_of)
from .errors import ConfigError, GarzError, HorizonWarning, InsufficientData
from .model import (blowup_horizon, check_nonneg_marker, epsilon_global_threshold, validate_kernel,
                    validate_velocity)
from .solver_local import run_local
from .solver_nonlocal import run, run_picard

DEFAULT_OUT = "garz_out"


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def resolve_scenario(name_or_path, overrides):
    path = Path(name_or_path)
    if not path.exists() and name_or_path in shipped_scenarios():
        path = shipped_path(name_or_path)
    return load_scenario(path, overrides)


def output_dir(args, scenario, command):
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get("GARZ_OUT", DEFAULT_OUT)) / f"{scenario.name}-{command}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


@dataclass
class RunSummary:
    """Picklable slice of a run: enough for convergence tables and reports."""

    scheme: str
    grid: object
    kernel: object
    states: list
    max_rho: float
    report: dict
    dirname: str


def write_run(result, out):
    """Checkpoint CSVs, per-step monitor, records table, report JSON and a gnuplot script."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for s in result.states:
        xi, h = xi_of(s, result.kernel, result.grid)
        io.write_state_csv(out / io.state_filename(s.t), s, xi, h, result.grid)
    io.write_table_csv(out / "records.csv", result.report.records)
    mon = result.monitor
    io.write_table_csv(out / "monitor.csv",
                       [dict(zip(mon, vals)) for vals in zip(*(mon[k] for k in mon))], list(mon))
    io.write_json(out / "report.json", result.report.as_dict())
    last = io.state_filename(result.states[-1].t)
    io.write_gnuplot(out / "plots.gp", [
        ("Oleinik monitor m(t)", "records.csv", "t", ["m"], False),
        ("TV of xi on the window", "records.csv", "t", ["tv_xi"], False),
        ("max rho per step", "monitor.csv", "t", ["rho_max"], False),
        (f"final state t = {result.states[-1].t:g}", last, "x", ["rho", "xi", "u"], False),
    ])


def attach_oleinik(result, scenario):
    """Fit the Oleinik pair on the run's checkpoints and the window TV bound; skip when too few points."""
    t, m = oleinik_monitor(result.states, result.kernel, result.grid)
    try:
        fit = fit_oleinik_bound(m, t)
    except InsufficientData:
        return None
    d = fit.as_dict()
    if scenario.window is not None and math.isfinite(fit.c):
        L = scenario.window
        tv = result.report.records[-1]["tv_xi"]
        d["tv_final"] = tv
        d["tv_bound_final"] = tv_bound(L, fit.a, fit.c, result.states[-1].t)
    result.report.fits["oleinik"] = d
    return fit


def run_point(scenario, scheme, epsilon, n_cells, checkpoints, out):
    """Run one configuration, write its artifacts, return a :class:`RunSummary` (pool worker)."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", HorizonWarning)
        if scheme == "godunov":
            result = run_local(scenario, checkpoints, n_cells)
        else:
            result = run(scenario, scheme, checkpoints, epsilon, n_cells)
    attach_oleinik(result, scenario)
    if out is not None:
        write_run(result, out)
    return RunSummary(result.scheme, result.grid, result.kernel, result.states, result.max_rho,
                      result.report.as_dict(), Path(out).name if out is not None else "")


def map_points(tasks, jobs):
    """Run ``run_point`` over ``tasks`` in order, concurrently when ``jobs > 1``."""
    if jobs <= 1 or len(tasks) <= 1:
        return [run_point(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(run_point, *t) for t in tasks]
        return [f.result() for f in futures]


def _accept_float(scenario, key):
    v = scenario.accept.get(key)
    if v is None:
        return None
    try:
        return float(v)
    except ValueError:
        raise ConfigError(f"[accept] {key}: expected a number, got {v!r}", None, scenario.path) from None


def summarize(command, scenario, checks):
    """Print ``PASS|FAIL <command> <scenario>: name=ok ...`` and return overall pass."""
    ok = all(passed for _, passed in checks)
    body = " ".join(f"{name}={'ok' if passed else 'fail'}" for name, passed in checks) or "no thresholds"
    print(f"{'PASS' if ok else 'FAIL'} {command} {scenario.name}: {body}")
    return ok


def _strictly_decreasing(v):
    return all(b < a for a, b in zip(v[:-1], v[1:]))


def _rel_spread(v):
    v = np.asarray(v, dtype=float)
    top = float(np.max(np.abs(v)))
    return 0.0 if top == 0 else float((v.max() - v.min()) / top)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_check(args):
    scenario = resolve_scenario(args.scenario, args.override)
    grid = scenario.grid()
    init = scenario.initial(grid)
    vm = scenario.velocity(init)
    vrep = validate_velocity(vm)
    kernel = scenario.kernel()
    krep = validate_kernel(kernel)
    report = {
        "alpha_V": vrep.alpha_v, "beta_V": vrep.beta_v, "C_V": vrep.c_v, "passes_V3": vrep.passes_v3,
        "blowup_horizon": blowup_horizon(vm, init.z_norm),
        "eps_threshold": epsilon_global_threshold(vm, init.z_norm, kernel.eta0),
        "z0_nonneg": check_nonneg_marker(init.z),
        "u0_range": list(init.u_range), "z0_norm": init.z_norm,
        "kernel": krep.as_dict(),
    }
    for key in ("alpha_V", "beta_V", "C_V", "passes_V3", "blowup_horizon", "eps_threshold", "z0_nonneg"):
        print(f"{key}: {_fmt(report[key])}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        io.write_json(out / "check.json", report)
    print(f"PASS check {scenario.name}: assumptions hold")
    return 0


def cmd_run(args):
    scenario = resolve_scenario(args.scenario, args.override)
    scheme = args.scheme or scenario.scheme
    out = output_dir(args, scenario, "run")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", HorizonWarning)
        if scheme == "godunov":
            result = run_local(scenario, n_cells=args.n_cells)
        else:
            result = run(scenario, scheme, epsilon=args.epsilon, n_cells=args.n_cells)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    fit = attach_oleinik(result, scenario)
    write_run(result, out)

    checks = []
    mon, init = result.monitor, result.initial
    v = _accept_float(scenario, "mass_drift")
    if v is not None:
        m0 = mon["mass"][0]
        drift = float(np.max(np.abs(mon["mass"] - m0)) / m0) if m0 > 0 else 0.0
        checks.append(("mass_drift", drift <= v))
    v = _accept_float(scenario, "bound_tol")
    if v is not None:
        lo, hi = init.u_range
        ok = (mon["u_min"].min() >= lo - v and mon["u_max"].max() <= hi + v
              and mon["z_abs"].max() <= init.z_norm + v and mon["psi_abs"].max() <= init.psi_norm + v
              and mon["xi_min"].min() >= -1e-12 and mon["xi_max"].max() <= 1 + v)
        checks.append(("max_principles", bool(ok)))
        if check_nonneg_marker(init.z):
            checks.append(("rho_below_max_rho0", result.max_rho <= init.rho.max() + v))
    v = _accept_float(scenario, "max_rho_global")
    if v is not None:
        checks.append(("max_rho_global", result.max_rho <= v))
    v = _accept_float(scenario, "oleinik_slack")
    if v is not None and fit is not None:
        t, m = oleinik_monitor(result.states, result.kernel, result.grid)
        sel = t >= 0.05
        checks.append(("oleinik", bool(np.all(m[sel] >= fit.bound(t[sel]) - v))))
    summarize("run", scenario, checks)
    return 0


def cmd_picard(args):
    scenario = resolve_scenario(args.scenario, args.override)
    out = output_dir(args, scenario, "picard")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", HorizonWarning)
        result, trace = run_picard(scenario, args.max_iters, args.q_tol, n_cells=args.n_cells)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    write_run(result, out)
    io.write_table_csv(out / "picard.csv", [
        {"n": i + 1, "sup_q": q} for i, q in enumerate(trace.sup_q)])
    io.write_table_csv(out / "picard_q_t.csv", [
        dict({"t": float(t)}, **{f"q{i + 1}": float(q[k]) for i, q in enumerate(trace.q_samples)})
        for k, t in enumerate(trace.q_times)])
    io.write_gnuplot(out / "picard.gp", [("sup_t Q_n", "picard.csv", "n", ["sup_q"], False)])

    checks = [("converged", trace.converged)]
    v = _accept_float(scenario, "contraction_ratio")
    if v is not None:
        checks.append(("contraction_ratio", all(r <= v for r in trace.ratios()[1:] if not math.isnan(r))))
    print(f"iterations: {trace.iterations}  sup Q: " + " ".join(f"{q:.3e}" for q in trace.sup_q))
    summarize("picard", scenario, checks)
    return 5 if trace.no_contraction else 0


def _with_time(scenario, t_eval):
    return tuple(sorted(set(scenario.checkpoint_times()) | {float(t_eval)}))


def cmd_sweep_eps(args):
    scenario = resolve_scenario(args.scenario, args.override)
    out = output_dir(args, scenario, "sweep-eps")
    eps_list = args.epsilons or scenario.sweep_epsilons or scenario.epsilons
    eps_list = sorted(eps_list, reverse=True)
    t_eval = args.t_eval or scenario.t_eval or scenario.t_end
    cks = _with_time(scenario, t_eval)
    scheme = scenario.scheme if scenario.scheme != "godunov" else "eulerian"
    tasks = [(scenario, scheme, e, args.n_cells, cks, out / f"eps_{e:g}") for e in eps_list]
    tasks.append((scenario, "godunov", None, args.n_cells, cks, out / "reference"))
    res = map_points(tasks, args.jobs)
    runs, ref = res[:-1], res[-1]
    table = convergence_table(runs, ref, t_eval, scenario.window)
    rows = table["rows"]
    K = fit_overshoot_constant([r["epsilon"] for r in rows], [r["max_rho"] for r in rows])
    io.write_table_csv(out / "convergence.csv", rows, ["epsilon", "l1_xi", "sup_u", "max_rho"])
    io.write_json(out / "sweep.json", {"t_eval": t_eval, "table": table, "overshoot_K": K,
                                       "runs": [r.dirname for r in runs], "reference": ref.dirname,
                                       "scenario": runs[0].report["scenario"]})
    io.write_gnuplot(out / "sweep.gp", [
        ("L1 distance of xi_eps to the local solution", "convergence.csv", "epsilon", ["l1_xi"], True),
        ("sup distance of u_eps", "convergence.csv", "epsilon", ["sup_u"], True),
        ("max rho_eps", "convergence.csv", "epsilon", ["max_rho"], False),
    ])
    for r in rows:
        print(f"eps={r['epsilon']:g} l1_xi={r['l1_xi']:.4e} sup_u={r['sup_u']:.4e} max_rho={r['max_rho']:.6f}")
    l1 = [r["l1_xi"] for r in rows]
    sup_u = [r["sup_u"] for r in rows]
    checks = [("l1_monotone", _strictly_decreasing(l1))]
    if any(sup_u):   # constant u gives an all-zero column with nothing to order
        checks.append(("sup_u_monotone", _strictly_decreasing(sup_u)))
    v = _accept_float(scenario, "l1_reduction")
    if v is not None:
        checks.append(("l1_reduction", l1[-1] > 0 and l1[0] / l1[-1] >= v))
    summarize("sweep-eps", scenario, checks)
    return 0


def cmd_sweep_mesh(args):
    scenario = resolve_scenario(args.scenario, args.override)
    out = output_dir(args, scenario, "sweep-mesh")
    n_list = sorted(args.n_list or scenario.n_list or (scenario.n_cells // 2, scenario.n_cells))
    scheme = scenario.scheme
    eps_list = sorted(scenario.sweep_epsilons, reverse=True) if scheme != "godunov" else ()
    tasks = [(scenario, scheme, None, n, None, out / f"n_{n}") for n in n_list]
    for n in n_list:
        tasks += [(scenario, scheme, e, n, None, None) for e in eps_list]
    res = map_points(tasks, args.jobs)
    base, extra = res[:len(n_list)], res[len(n_list):]
    t_end = scenario.checkpoint_times()[-1]
    rows = []
    for i, (n, r) in enumerate(zip(n_list, base)):
        row = {"n": n, "dx": r.grid.dx, "max_rho": r.max_rho,
               "k_slope": slope_constant(r.states, r.kernel, r.grid),
               "l1_to_finest": rho_l1(r, base[-1], t_end)}
        if eps_list:
            sub = extra[i * len(eps_list):(i + 1) * len(eps_list)]
            row["k_overshoot"] = fit_overshoot_constant(eps_list, [s.max_rho for s in sub])
        rows.append(row)
    key = "k_overshoot" if eps_list else "k_slope"
    spread = _rel_spread([r[key] for r in rows])
    io.write_table_csv(out / "mesh.csv", rows)
    io.write_json(out / "mesh.json", {"rows": rows, "stability_key": key, "relative_spread": spread,
                                      "scenario": base[0].report["scenario"]})
    io.write_gnuplot(out / "mesh.gp", [("L1 distance to the finest mesh", "mesh.csv", "dx", ["l1_to_finest"], True),
                                       (f"{key} per mesh", "mesh.csv", "n", [key], False)])
    for r in rows:
        print(" ".join(f"{k}={_fmt(v)}" for k, v in r.items()))
    checks = []
    v = _accept_float(scenario, "k_stability")
    if v is not None:
        checks.append(("k_stability", spread <= v))
    summarize("sweep-mesh", scenario, checks)
    return 0


def cmd_compare_schemes(args):
    scenario = resolve_scenario(args.scenario, args.override)
    out = output_dir(args, scenario, "compare-schemes")
    n_list = sorted(args.n_list or scenario.n_list or (scenario.n_cells // 2, scenario.n_cells))
    t_eval = args.t_eval or scenario.t_eval or scenario.t_end
    cks = _with_time(scenario, t_eval)
    tasks = []
    for n in n_list:
        tasks.append((scenario, "eulerian", None, n, cks, out / f"eulerian_n{n}"))
        tasks.append((scenario, "lagrangian", None, n, cks, out / f"lagrangian_n{n}"))
    res = map_points(tasks, args.jobs)
    rows = []
    for i, n in enumerate(n_list):
        rows.append({"n": n, "l1_rho": rho_l1(res[2 * i], res[2 * i + 1], t_eval)})
    ratios = [a["l1_rho"] / b["l1_rho"] if b["l1_rho"] > 0 else math.inf for a, b in zip(rows[:-1], rows[1:])]
    io.write_table_csv(out / "agreement.csv", rows)
    io.write_json(out / "agreement.json", {"t_eval": t_eval, "rows": rows, "ratios": ratios})
    io.write_gnuplot(out / "agreement.gp", [("Eulerian vs Lagrangian L1", "agreement.csv", "n", ["l1_rho"], True)])
    for r in rows:
        print(f"n={r['n']} l1_rho={r['l1_rho']:.4e}")
    checks = []
    lo, hi = _accept_float(scenario, "agree_lo"), _accept_float(scenario, "agree_hi")
    if lo is not None and hi is not None:
        checks.append(("agreement_rate", all(lo <= q <= hi for q in ratios)))
    summarize("compare-schemes", scenario, checks)
    return 0


COMMANDS = {
    "check": cmd_check,
    "run": cmd_run,
    "picard": cmd_picard,
    "sweep-eps": cmd_sweep_eps,
    "sweep-mesh": cmd_sweep_mesh,
    "compare-schemes": cmd_compare_schemes,
}


def _floats(text):
    try:
        return tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario", help="scenario file, or the name of a shipped scenario")
    common.add_argument("--out", help="output directory (default: $GARZ_OUT/<scenario>-<command>)")
    common.add_argument("--jobs", type=int, default=1, help="concurrent sweep points")
    common.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a scenario value (repeatable)")
    common.add_argument("--checkpoints", type=_floats, help="comma-separated output times")
    common.add_argument("--n-cells", type=int, help="override the number of cells")

    p = argparse.ArgumentParser(prog="nlgarz", description="Nonlocal GARZ traffic simulator and verification harness.")
    p.add_argument("--list", action="store_true", help="list shipped scenarios and exit")
    sub = p.add_subparsers(dest="command")
    sub.add_parser("check", parents=[common], help="validate a scenario's assumptions")
    r = sub.add_parser("run", parents=[common], help="single run")
    r.add_argument("--scheme", choices=("eulerian", "lagrangian", "godunov"))
    r.add_argument("--epsilon", type=float)
    pc = sub.add_parser("picard", parents=[common], help="Picard iteration with the Q_n diagnostic")
    pc.add_argument("--max-iters", type=int)
    pc.add_argument("--q-tol", type=float)
    se = sub.add_parser("sweep-eps", parents=[common], help="epsilon sweep against the local solution")
    se.add_argument("--epsilons", type=_floats)
    se.add_argument("--t-eval", type=float)
    sm = sub.add_parser("sweep-mesh", parents=[common], help="mesh refinement sweep")
    sm.add_argument("--n-list", type=_ints)
    cs = sub.add_parser("compare-schemes", parents=[common], help="Eulerian vs Lagrangian agreement")
    cs.add_argument("--n-list", type=_ints)
    cs.add_argument("--t-eval", type=float)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.list:
        print("\n".join(shipped_scenarios()))
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    if args.checkpoints:
        args.override = list(args.override) + ["time.checkpoints=" + ",".join(repr(t) for t in args.checkpoints)]
    try:
        return COMMANDS[args.command](args)
    except GarzError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
