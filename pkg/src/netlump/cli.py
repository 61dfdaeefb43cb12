"""Command-line entry point ``netlump``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 fitted order
outside the acceptance band (``sweep`` only).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .core import GridFunction, norm_l1, project_average, trapezoid_weights
from .coupling import (
    NoConvergenceError,
    aggregated_matrix,
    check_diffusion_positivity,
    check_markov_conditions,
    kolmogorov_check,
    perron_vector,
)
from .diffusion import NumericalError, solve_diffusion
from .lumping import ConvergenceReport, DiffusionExpansion, TransportExpansion
from .mckendrick import aggregate_vital_rates, solve_aggregated_mckendrick, solve_structured, stable_distribution
from .scenario import (
    ConfigError,
    build_diffusion_coupling,
    build_diffusion_problem,
    build_population,
    build_transport_matrix,
    build_transport_problem,
    comparison_times,
    load_config,
    run_sweep,
    with_overrides,
)
from .transport import projected_exact, transport_exact

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_BAND = 0, 2, 3, 4
DEFAULT_SCENARIO = {"diffusion": "two_edge", "transport": "transport3", "mckendrick": "mckendrick"}


def fmt(x) -> str:
    """Fixed 17-significant-digit formatting so emitted files are bit-stable."""
    return format(float(x), ".17g")


def sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json") if path.suffix == ".csv" else path.with_name(path.name + ".json")


def emit_report(report: ConvergenceReport, path, digest: str | None = None) -> tuple[Path, Path]:
    """Write ``eps,error_l1,error_sup`` rows and a JSON sidecar; returns both paths."""
    path = Path(path)
    digest = digest if digest is not None else report.extra.get("config_digest")
    sup = report.errors_sup if report.errors_sup is not None else [float("nan")] * len(report.errors)
    lines = ["eps,error_l1,error_sup"]
    lines += [f"{fmt(e)},{fmt(a)},{fmt(b)}" for e, a, b in zip(report.eps_list, report.errors, sup)]
    meta = {
        "band": list(report.band),
        "config_digest": digest,
        "degenerate": report.degenerate,
        "fitted_order": report.fitted_order,
        "label": report.label,
        "pass": report.passed,
    }
    side = sidecar_path(path)
    try:
        path.write_text("\n".join(lines) + "\n")
        side.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc.strerror or exc}") from exc
    return path, side


def read_report_csv(path) -> list[tuple[float, float, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(float(r["eps"]), float(r["error_l1"]), float(r["error_sup"])) for r in rows]


def write_grid_csv(u: GridFunction, path):
    rows = ["edge,x,value"]
    for j, row in enumerate(u.values):
        rows += [f"{j},{fmt(x)},{fmt(v)}" for x, v in zip(u.x, row)]
    _write(path, rows)


def _write(path, rows):
    try:
        Path(path).write_text("\n".join(rows) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _parse_list(text: str, name: str) -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"--{name}: expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise ConfigError(f"--{name}: no values given")
    return vals


def _config(args, kind: str):
    ref = args.scenario or DEFAULT_SCENARIO[kind]
    cfg = load_config(ref)
    if cfg.kind != kind:
        raise ConfigError(f"scenario {ref!r} has kind {cfg.kind!r}, expected {kind!r}")
    changes = {}
    if args.eps is not None:
        changes["eps_list"] = _parse_list(args.eps, "eps")
    if args.t is not None:
        changes["t_final"] = args.t
    if getattr(args, "band", None) is not None:
        band = _parse_list(args.band, "band")
        if len(band) != 2:
            raise ConfigError(f"--band: expected lo,hi, got {args.band!r}")
        changes["band"] = band
    if getattr(args, "metric", None) is not None:
        changes["metric"] = args.metric
    cells_key = "n_age" if kind == "mckendrick" else "n_cells"
    return with_overrides(cfg, dt=args.dt, n_terms=args.terms, **{cells_key: args.cells}, **changes)


def _single_eps(cfg) -> float:
    if len(cfg.eps_list) != 1:
        raise ConfigError(f"--eps: this command takes one value, got {len(cfg.eps_list)}")
    return cfg.eps_list[0]


def cmd_diffuse(args) -> int:
    cfg = _config(args, "diffusion")
    if args.eps is None:
        cfg = with_overrides(cfg, eps_list=cfg.eps_list[-1:])
    eps = _single_eps(cfg)
    p = build_diffusion_problem(cfg, eps)
    times = comparison_times(cfg.t_final, eps)
    traj = solve_diffusion(p, times)
    exp = DiffusionExpansion(p, cfg.disc("n_terms", 200))
    print("t,edge_totals,lumped,projected_error")
    for t, u in zip(times, traj.states):
        v, vbar = project_average(u), exp.vbar(t)
        print(f"{t:.6g},{' '.join(f'{a:.8g}' for a in v)},{' '.join(f'{a:.8g}' for a in vbar)},"
              f"{np.abs(v - vbar).sum():.3e}")
    if args.emit:
        write_grid_csv(traj[-1], args.emit)
    return EXIT_OK


def cmd_transport(args) -> int:
    cfg = _config(args, "transport")
    if args.eps is None:
        cfg = with_overrides(cfg, eps_list=cfg.eps_list[-1:])
    eps = _single_eps(cfg)
    p = build_transport_problem(cfg, eps)
    u = transport_exact(p, cfg.t_final)
    v = projected_exact(p, cfg.t_final)
    vbar = TransportExpansion(p).vbar(cfg.t_final)
    print(f"t = {cfg.t_final:g}, eps = {eps:g}")
    print("edge totals: " + " ".join(f"{a:.10g}" for a in v))
    print("lumped:      " + " ".join(f"{a:.10g}" for a in vbar))
    print(f"total mass:  {v.sum():.12g}")
    if args.emit:
        write_grid_csv(u, args.emit)
    return EXIT_OK


def cmd_mckendrick(args) -> int:
    cfg = _config(args, "mckendrick")
    if args.eps is None:
        cfg = with_overrides(cfg, eps_list=cfg.eps_list[-1:])
    eps = _single_eps(cfg)
    p = build_population(cfg, eps)
    n = stable_distribution(p)
    mu_star, beta_star = aggregate_vital_rates(n, p.mu, p.beta)
    full = solve_structured(p, cfg.t_final)
    lumped = solve_aggregated_mckendrick(mu_star, beta_star, p.n0.sum(axis=0), cfg.t_final, p.a_max, p.n_age)
    gap = np.abs(full.total_density() - lumped.densities[:, 0, :]) @ (trapezoid_weights(p.n_age) * p.a_max)
    print("stable distribution: " + " ".join(f"{a:.10g}" for a in n))
    print(f"population at t = {cfg.t_final:g}: structured {full.population()[-1]:.10g}, "
          f"aggregated {lumped.population()[-1]:.10g}")
    print(f"aggregation gap (sup over t): {gap.max():.6e}")
    if full.truncated[-1] > 0:
        print(f"mass carried past a_max: {full.truncated[-1]:.3e}")
    if args.emit:
        rows = ["age,structured,aggregated"]
        rows += [f"{fmt(a)},{fmt(s)},{fmt(g)}"
                 for a, s, g in zip(p.ages, full.total_density()[-1], lumped.densities[-1, 0])]
        _write(args.emit, rows)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args, args.kind)
    report = run_sweep(cfg, jobs=args.jobs)
    print("eps,error_l1,error_sup")
    for e, a, b in zip(report.eps_list, report.errors, report.errors_sup):
        print(f"{fmt(e)},{fmt(a)},{fmt(b)}")
    print(report.summary())
    if args.emit:
        emit_report(report, args.emit, cfg.digest())
    if report.degenerate:
        print(f"note: no order fitted ({report.degenerate})", file=sys.stderr)
        return EXIT_OK
    return EXIT_OK if report.passed else EXIT_BAND


def _verdict(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


def cmd_check(args) -> int:
    ref = args.coupling or args.scenario
    if ref is None:
        raise ConfigError("check needs --coupling or --scenario")
    cfg = load_config(ref)
    form = cfg.coupling.get("form")
    if form in ("rates", "matrices"):
        c = build_diffusion_coupling(cfg, density=False)
        ok, bad = check_diffusion_positivity(c)
        print(f"positivity: {_verdict(ok)}" + ("" if ok else f" ({', '.join(f'{n}[{i},{j}]' for n, i, j in bad)})"))
        print(f"markov: {_verdict(check_markov_conditions(c))}")
        lumped = aggregated_matrix(c).T
        print(f"kolmogorov: {_verdict(kolmogorov_check(lumped))}")
        print("lumped density matrix: " + np.array2string(lumped, separator=", "))
    elif form == "transport":
        b = build_transport_matrix(cfg)
        print(f"B 1-norm: {np.linalg.norm(b, 1):.10g}")
    elif form == "stochastic":
        t = np.array(cfg.coupling["T"], dtype=float)
        stochastic = bool(np.all(t >= 0) and np.allclose(t.sum(axis=0), 1.0, atol=1e-10, rtol=0))
        print(f"column-stochastic: {_verdict(stochastic)}")
        print("perron vector: " + " ".join(f"{a:.10g}" for a in perron_vector(t)))
    return EXIT_OK


def cmd_expand(args) -> int:
    ref = args.scenario or DEFAULT_SCENARIO["diffusion"]
    kind = load_config(ref).kind
    if kind not in ("diffusion", "transport"):
        raise ConfigError(f"expand needs a diffusion or transport scenario, got kind {kind!r}")
    args.scenario = ref
    cfg = _config(args, kind)
    if args.eps is None:
        cfg = with_overrides(cfg, eps_list=cfg.eps_list[-1:])
    eps = _single_eps(cfg)
    t = cfg.t_final
    if kind == "diffusion":
        p = build_diffusion_problem(cfg, eps)
        comp = DiffusionExpansion(p, cfg.disc("n_terms", 200)).at(t)
    else:
        p = build_transport_problem(cfg, eps)
        comp = TransportExpansion(p).at(t)
    n_cells = comp.w1.n_cells
    parts = {"vbar": GridFunction.constant(comp.vbar, n_cells), "w1": comp.w1, "wtilde0": comp.wtilde0}
    rows = ["component,edge,x,value"]
    for name, g in parts.items():
        for j, row in enumerate(g.values):
            rows += [f"{name},{j},{fmt(x)},{fmt(v)}" for x, v in zip(g.x, row)]
    if args.emit:
        _write(args.emit, rows)
    else:
        print("\n".join(rows))
    print(f"# eps = {eps:g}, t = {t:g}, eps*|w1|_1 = {eps * norm_l1(comp.w1):.3e}, "
          f"|wtilde0|_1 = {norm_l1(comp.wtilde0):.3e}", file=sys.stderr)
    return EXIT_OK


def _common(p: argparse.ArgumentParser):
    p.add_argument("--scenario", help="scenario file or bundled scenario name")
    p.add_argument("--eps", help="eps value, or comma-separated list for sweep")
    p.add_argument("--t", type=float, help="final time")
    p.add_argument("--cells", type=int, help="grid cells (age cells for mckendrick)")
    p.add_argument("--dt", type=float, help="diffusion time step")
    p.add_argument("--terms", type=int, help="cosine modes in the diffusion layer")
    p.add_argument("--emit", help="output file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netlump", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, hlp in (("diffuse", cmd_diffuse, "solve a diffusion scenario for one eps"),
                          ("transport", cmd_transport, "exact transport solution for one eps"),
                          ("mckendrick", cmd_mckendrick, "structured vs aggregated population"),
                          ("expand", cmd_expand, "emit vbar, w1 and wtilde0 separately")):
        p = sub.add_parser(name, help=hlp)
        _common(p)
        p.set_defaults(func=fn)
    p = sub.add_parser("sweep", help="eps ladder with fitted convergence order")
    _common(p)
    p.add_argument("--kind", choices=("diffusion", "transport", "mckendrick"), required=True)
    p.add_argument("--metric", help="error measure (depends on kind)")
    p.add_argument("--band", help="acceptance band lo,hi for the fitted order")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("check", help="structural checks of a coupling")
    p.add_argument("--coupling", help="scenario file holding a [coupling] section")
    p.add_argument("--scenario", help="same as --coupling")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (NumericalError, FloatingPointError, OverflowError, NoConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
