"""Scenario files and epsilon sweeps shared by the command line and the test suite.

A scenario is an INI file read with :mod:`configparser`.  Matrices and
vectors are Python literals (row lists).  Sections::

    [scenario]        kind, eps (comma list), t_final, times, seed, metric, band
    [coupling]        form = matrices | rates | transport | stochastic, plus its data
    [initial]         edge0, edge1, ...  one profile per edge
    [discretization]  n_cells, dt, dt_factor, n_terms, boundary, cfl, n_age, a_max
    [population]      K, mu0.., beta0.., n0_0.. (McKendrick scenarios)

Edge profiles are ``;``-separated sums of named terms, for example
``cosine 1 0.5 1; polynomial 0 0 0.3`` is ``1 + 0.5 cos(pi x) + 0.3 x^2``.
"""

from __future__ import annotations

import ast
import configparser
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import GridFunction, as_square_matrix, norm_l1, norm_sup, project_average
from .coupling import (
    DiffusionCoupling,
    EdgeExchangeRates,
    TransportCoupling,
    adjoint_coupling,
    coupling_from_rates,
)
from .diffusion import DiffusionProblem, solve_diffusion
from .lumping import DEFAULT_BAND, DEFAULT_TERMS, ConvergenceReport, DiffusionExpansion, TransportExpansion, estimate_order
from .mckendrick import StructuredPopulation, aggregation_gap, constant, gaussian_window, ramp, tabulated
from .transport import TransportProblem, projected_exact, stochastic_transport_problem, transport_exact

KINDS = ("diffusion", "transport", "mckendrick", "check")
METRICS = {
    "diffusion": ("projected", "full", "corrected"),
    "transport": ("projected", "layer", "corrected"),
    "mckendrick": ("gap",),
}
SCENARIO_DIR = Path(__file__).parent / "scenarios"


class ConfigError(ValueError):
    """A scenario file or override is invalid; the message names the field."""


# ---- profiles -------------------------------------------------------------

def _edge_term(name: str, args: list[float]):
    def need(k):
        if len(args) != k:
            raise ConfigError(f"profile '{name}' takes {k} parameters, got {len(args)}")

    if name == "constant":
        need(1)
        c = args[0]
        return lambda x: np.full_like(x, c)
    if name in ("cosine", "sine"):
        need(3)
        c, a, k = args
        fn = np.cos if name == "cosine" else np.sin
        return lambda x: c + a * fn(k * np.pi * x)
    if name == "sine_squared":
        need(1)
        a = args[0]
        return lambda x: a * np.sin(np.pi * x) ** 2
    if name == "polynomial":
        if not args:
            raise ConfigError("profile 'polynomial' needs at least one coefficient")
        coeffs = args[::-1]
        return lambda x: np.polyval(coeffs, x)
    if name == "gaussian":
        need(3)
        return gaussian_window(*args)
    raise ConfigError(f"unknown edge profile '{name}'")


def _split_terms(text: str):
    for term in text.split(";"):
        words = term.split()
        if not words:
            raise ConfigError(f"empty profile term in {text!r}")
        yield words[0], words[1:]


def edge_profile(text: str):
    """Callable ``x -> values`` for one edge from a profile string."""
    terms = []
    for name, raw in _split_terms(text):
        try:
            args = [float(a) for a in raw]
        except ValueError:
            raise ConfigError(f"non-numeric parameter in profile {text!r}") from None
        terms.append(_edge_term(name, args))

    def profile(x):
        x = np.asarray(x, dtype=float)
        return sum(term(x) for term in terms)

    return profile


def network_profile(texts):
    """Stack per-edge profile strings into ``x -> (m, len(x))``."""
    parts = [edge_profile(t) for t in texts]

    def profile(x):
        return np.vstack([p(x) for p in parts])

    return profile


def age_profile(text: str):
    """Vital-rate or initial-density profile on ages (sums allowed, like edge profiles)."""
    terms = []
    for name, raw in _split_terms(text):
        if name == "tabulated":
            try:
                pairs = [tuple(float(v) for v in item.split(":")) for item in raw]
            except ValueError:
                raise ConfigError(f"tabulated entries must be age:value, got {raw}") from None
            if not pairs or any(len(p) != 2 for p in pairs):
                raise ConfigError(f"tabulated entries must be age:value, got {raw}")
            try:
                terms.append(tabulated(*zip(*pairs)))
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            continue
        try:
            args = [float(a) for a in raw]
        except ValueError:
            raise ConfigError(f"non-numeric parameter in profile {text!r}") from None
        builders = {"constant": (constant, 1), "ramp": (ramp, 4), "gaussian": (gaussian_window, 3)}
        if name not in builders:
            raise ConfigError(f"unknown age profile '{name}'")
        fn, k = builders[name]
        if len(args) != k:
            raise ConfigError(f"profile '{name}' takes {k} parameters, got {len(args)}")
        try:
            terms.append(fn(*args))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def profile(a):
        a = np.asarray(a, dtype=float)
        return sum(term(a) for term in terms)

    return profile


# ---- configuration --------------------------------------------------------

@dataclass
class ScenarioConfig:
    """Validated scenario, kept as plain data so it can be hashed and sent to workers."""

    kind: str
    eps_list: tuple = (0.2, 0.1, 0.05, 0.025)
    t_final: float = 1.0
    times: tuple | None = None
    seed: int = 0
    metric: str | None = None
    band: tuple = DEFAULT_BAND
    coupling: dict = field(default_factory=dict)
    initial: tuple = ()
    discretization: dict = field(default_factory=dict)
    population: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not self.eps_list or any(not (e > 0 and math.isfinite(e)) for e in self.eps_list):
            raise ConfigError(f"eps values must be positive, got {self.eps_list}")
        if not self.t_final > 0:
            raise ConfigError(f"t_final must be positive, got {self.t_final}")
        lo, hi = self.band
        if not lo <= hi:
            raise ConfigError(f"band must satisfy lo <= hi, got {self.band}")
        if self.kind in METRICS:
            allowed = METRICS[self.kind]
            if self.metric is None:
                self.metric = allowed[0]
            elif self.metric not in allowed:
                raise ConfigError(f"metric for {self.kind} must be one of {allowed}, got {self.metric!r}")

    def digest(self) -> str:
        """sha256 of the canonical JSON form; identical configs give identical digests."""
        blob = json.dumps(asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()

    def disc(self, key, default):
        return self.discretization.get(key, default)


def _literal(section, key):
    raw = section[key]
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        raise ConfigError(f"[{section.name}] {key}: cannot parse literal {raw!r}") from None


def _float_list(text: str, field_name: str) -> tuple:
    try:
        return tuple(float(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError:
        raise ConfigError(f"{field_name}: expected comma-separated numbers, got {text!r}") from None


def _indexed(section, prefix: str) -> list[str]:
    keys = sorted((k for k in section if k.startswith(prefix) and k[len(prefix):].isdigit()),
                  key=lambda k: int(k[len(prefix):]))
    return [section[k] for k in keys]


_DISC_TYPES = {"n_cells": int, "dt": float, "dt_factor": float, "n_terms": int, "boundary": str,
               "cfl": float, "n_age": int, "a_max": float, "strang": str, "upwind_cells": str}


def parse_config(text: str, name: str = "") -> ScenarioConfig:
    """Parse scenario text into a :class:`ScenarioConfig`; raises :class:`ConfigError`."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed scenario file: {exc}") from None
    if "scenario" not in parser:
        raise ConfigError("missing [scenario] section")
    sc = parser["scenario"]
    kwargs = {"kind": sc.get("kind", "").strip(), "name": name}
    try:
        if "eps" in sc:
            kwargs["eps_list"] = _float_list(sc["eps"], "[scenario] eps")
        if "t_final" in sc:
            kwargs["t_final"] = float(sc["t_final"])
        if "times" in sc:
            kwargs["times"] = _float_list(sc["times"], "[scenario] times")
        if "seed" in sc:
            kwargs["seed"] = int(sc["seed"])
        if "band" in sc:
            band = _float_list(sc["band"], "[scenario] band")
            if len(band) != 2:
                raise ConfigError(f"[scenario] band: expected lo,hi, got {sc['band']!r}")
            kwargs["band"] = band
    except ValueError as exc:
        raise ConfigError(f"[scenario] {exc}") from None
    if "metric" in sc:
        kwargs["metric"] = sc["metric"].strip()
    if "coupling" in parser:
        kwargs["coupling"] = {k: (v.strip() if k in ("form", "formulation", "B") and not v.strip().startswith("[")
                                  else _literal(parser["coupling"], k))
                              for k, v in parser["coupling"].items()}
    if "initial" in parser:
        kwargs["initial"] = tuple(_indexed(parser["initial"], "edge"))
    if "discretization" in parser:
        disc = {}
        for key, raw in parser["discretization"].items():
            if key not in _DISC_TYPES:
                raise ConfigError(f"[discretization] unknown key {key!r}")
            try:
                disc[key] = _DISC_TYPES[key](raw.strip())
            except ValueError:
                raise ConfigError(f"[discretization] {key}: bad value {raw!r}") from None
        kwargs["discretization"] = disc
    if "population" in parser:
        pop = parser["population"]
        kwargs["population"] = {
            "K": _literal(pop, "K") if "K" in pop else None,
            "mu": _indexed(pop, "mu"),
            "beta": _indexed(pop, "beta"),
            "n0": _indexed(pop, "n0_"),
        }
    cfg = ScenarioConfig(**kwargs)
    validate(cfg)
    return cfg


def load_config(ref: str) -> ScenarioConfig:
    """Load a scenario by path, or by name from the bundled scenario directory."""
    path = Path(ref)
    if not path.exists():
        for cand in (SCENARIO_DIR / ref, SCENARIO_DIR / f"{ref}.cfg"):
            if cand.exists():
                path = cand
                break
        else:
            raise ConfigError(f"scenario {ref!r} not found (no such file or bundled scenario)")
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from None
    return parse_config(text, path.stem)


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.cfg"))


# ---- builders ---------------------------------------------------------------

def _matrix(cp: dict, key: str):
    if key not in cp:
        raise ConfigError(f"[coupling] missing {key}")
    try:
        return as_square_matrix(cp[key], key)
    except ValueError as exc:
        raise ConfigError(f"[coupling] {exc}") from None


def exchange_rates(cfg: ScenarioConfig) -> EdgeExchangeRates:
    cp = cfg.coupling
    try:
        rates = EdgeExchangeRates(
            tuple(cp["l"]), tuple(cp["r"]),
            {tuple(int(v) for v in row[:3]): float(row[3]) for row in cp.get("l_pairs", [])},
            {tuple(int(v) for v in row[:3]): float(row[3]) for row in cp.get("r_pairs", [])},
        )
        rates.validate()
    except KeyError as exc:
        raise ConfigError(f"[coupling] missing {exc.args[0]}") from None
    except (TypeError, IndexError):
        raise ConfigError("[coupling] l_pairs/r_pairs rows must be [i, j, v, rate]") from None
    except ValueError as exc:
        raise ConfigError(f"[coupling] {exc}") from None
    return rates


def build_diffusion_coupling(cfg: ScenarioConfig, density: bool | None = None) -> DiffusionCoupling:
    """Coupling as stated in the file; ``formulation = density`` switches to the dual (mass) form."""
    cp = cfg.coupling
    form = cp.get("form", "matrices")
    if form == "rates":
        c = coupling_from_rates(exchange_rates(cfg))
    elif form == "matrices":
        try:
            c = DiffusionCoupling(*(_matrix(cp, k) for k in ("K00", "K01", "K10", "K11")))
        except ValueError as exc:
            raise ConfigError(f"[coupling] {exc}") from None
    else:
        raise ConfigError(f"[coupling] form {form!r} does not describe a diffusion coupling")
    if density is None:
        formulation = cp.get("formulation", "direct")
        if formulation not in ("direct", "density"):
            raise ConfigError(f"[coupling] formulation must be direct or density, got {formulation!r}")
        density = formulation == "density"
    return adjoint_coupling(c) if density else c


def random_b(m: int, norm: float, seed: int) -> np.ndarray:
    """Gaussian matrix rescaled to the given induced 1-norm."""
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((m, m))
    return b * (norm / np.linalg.norm(b, 1))


def build_transport_matrix(cfg: ScenarioConfig) -> np.ndarray:
    cp = cfg.coupling
    b = cp.get("B")
    if isinstance(b, str):
        if b != "random":
            raise ConfigError(f"[coupling] B must be a matrix literal or 'random', got {b!r}")
        try:
            return random_b(int(cp["m"]), float(cp.get("B_norm", 1.0)), cfg.seed)
        except KeyError:
            raise ConfigError("[coupling] random B needs m") from None
    return _matrix(cp, "B")


def build_transport_problem(cfg: ScenarioConfig, eps: float) -> TransportProblem:
    n_cells = cfg.disc("n_cells", 256)
    profile = network_profile(cfg.initial)
    form = cfg.coupling.get("form")
    if form == "stochastic":
        return stochastic_transport_problem(_matrix(cfg.coupling, "T"), eps, profile, n_cells, cfg.t_final)
    if form != "transport":
        raise ConfigError(f"[coupling] form {form!r} does not describe a transport coupling")
    return TransportProblem(TransportCoupling(build_transport_matrix(cfg)), eps, profile, cfg.t_final, n_cells)


def build_diffusion_problem(cfg: ScenarioConfig, eps: float) -> DiffusionProblem:
    n_cells = cfg.disc("n_cells", 256)
    u0 = GridFunction.from_profile(network_profile(cfg.initial), n_cells)
    dt = cfg.disc("dt", None)
    if dt is None:
        dt = min(1e-3 * cfg.t_final, cfg.disc("dt_factor", 0.02) * eps)
    return DiffusionProblem(build_diffusion_coupling(cfg), eps, u0, cfg.t_final, dt,
                            boundary=cfg.disc("boundary", "ghost"))


def build_population(cfg: ScenarioConfig, eps: float) -> StructuredPopulation:
    pop = cfg.population
    if not pop or pop.get("K") is None:
        raise ConfigError("[population] K is required")
    k = pop["K"]
    try:
        return StructuredPopulation(
            beta=[age_profile(t) for t in pop["beta"]],
            mu=[age_profile(t) for t in pop["mu"]],
            K=k, eps=eps,
            n0=[age_profile(t) for t in pop["n0"]],
            a_max=cfg.disc("a_max", 5.0), n_age=cfg.disc("n_age", 1000),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[population] {exc}") from None


def validate(cfg: ScenarioConfig):
    """Build every object the scenario needs once, so errors surface at load time."""
    eps = cfg.eps_list[0]
    if cfg.kind == "mckendrick":
        p = build_population(cfg, eps)
        for key in ("mu", "beta", "n0"):
            if len(cfg.population[key]) != p.m:
                raise ConfigError(f"[population] needs {p.m} {key} entries, got {len(cfg.population[key])}")
        return
    form = cfg.coupling.get("form")
    if form is None:
        raise ConfigError("[coupling] form is required")
    if cfg.kind == "check":
        if form in ("rates", "matrices"):
            build_diffusion_coupling(cfg)
        elif form == "transport":
            build_transport_matrix(cfg)
        elif form == "stochastic":
            _matrix(cfg.coupling, "T")
        else:
            raise ConfigError(f"[coupling] unknown form {form!r}")
        return
    try:
        if cfg.kind == "diffusion":
            m = build_diffusion_coupling(cfg).m
        else:
            p = build_transport_problem(cfg, eps)
            m = p.coupling.m
        if len(cfg.initial) != m:
            raise ConfigError(f"[initial] needs {m} edge profiles, got {len(cfg.initial)}")
        if cfg.kind == "diffusion":
            build_diffusion_problem(cfg, eps)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---- sweeps -----------------------------------------------------------------

def comparison_times(t_final: float, eps: float, extra=None) -> np.ndarray:
    """Uniform grid on [0, t_final] plus points inside and at the edge of the initial layer."""
    pts = [np.linspace(0.0, t_final, 21), eps * np.array([0.1, 0.25, 0.5, 1.0])]
    if eps < 1:
        pts.append([eps * math.log(1.0 / eps)])
    if extra is not None:
        pts.append(extra)
    t = np.concatenate(pts)
    return np.unique(t[(t >= 0) & (t <= t_final)])


def diffusion_point(cfg: ScenarioConfig, eps: float) -> tuple[float, float, float]:
    p = build_diffusion_problem(cfg, eps)
    times = comparison_times(cfg.t_final, eps, cfg.times)
    traj = solve_diffusion(p, times)
    exp = DiffusionExpansion(p, cfg.disc("n_terms", DEFAULT_TERMS))
    l1 = sup = 0.0
    for t, u in zip(times, traj.states):
        comp = exp.at(t)
        if cfg.metric == "projected":
            d = np.abs(project_average(u) - comp.vbar)
            l1, sup = max(l1, float(d.sum())), max(sup, float(d.max()))
        else:
            diff = u - comp.total(include_corrector=cfg.metric == "corrected")
            l1, sup = max(l1, norm_l1(diff)), max(sup, norm_sup(diff))
    return eps, l1, sup


def transport_point(cfg: ScenarioConfig, eps: float) -> tuple[float, float, float]:
    p = build_transport_problem(cfg, eps)
    exp = TransportExpansion(p)
    times = comparison_times(cfg.t_final, eps, cfg.times)
    l1 = sup = 0.0
    for t in times:
        if cfg.metric == "projected":
            d = np.abs(projected_exact(p, t) - exp.vbar(t))
            l1, sup = max(l1, float(d.sum())), max(sup, float(d.max()))
            continue
        u = transport_exact(p, t)
        comp = exp.at(t)
        if cfg.metric == "layer":
            kinetic = u - GridFunction.constant(projected_exact(p, t), p.grid_cells)
            diff = kinetic - comp.wtilde0
        else:
            diff = u - comp.total()
        l1, sup = max(l1, norm_l1(diff)), max(sup, norm_sup(diff))
    return eps, l1, sup


def mckendrick_point(cfg: ScenarioConfig, eps: float) -> tuple[float, float, float]:
    p = build_population(cfg, eps)
    strang = cfg.disc("strang", "no").lower() in ("yes", "true", "1")
    gap = aggregation_gap(p, cfg.t_final, strang=strang)
    return eps, gap, gap


POINT_RUNNERS = {"diffusion": diffusion_point, "transport": transport_point, "mckendrick": mckendrick_point}


def run_point(cfg: ScenarioConfig, eps: float):
    return POINT_RUNNERS[cfg.kind](cfg, eps)


def run_sweep(cfg: ScenarioConfig, jobs: int = 1) -> ConvergenceReport:
    """Errors for every eps of the scenario and their fitted order.

    With ``jobs > 1`` the points run in a process pool; results are sorted by
    eps, so the report does not depend on completion order.
    """
    if cfg.kind not in POINT_RUNNERS:
        raise ConfigError(f"kind {cfg.kind!r} cannot be swept")
    eps_list = sorted(set(cfg.eps_list), reverse=True)
    if jobs > 1 and len(eps_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_point, [cfg] * len(eps_list), eps_list))
    else:
        rows = [run_point(cfg, e) for e in eps_list]
    rows.sort(key=lambda r: -r[0])
    report = estimate_order([r[0] for r in rows], [r[1] for r in rows], cfg.band,
                            errors_sup=[r[2] for r in rows], label=f"{cfg.kind}/{cfg.metric}")
    report.extra["config_digest"] = cfg.digest()
    return report


def with_overrides(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    """Copy with top-level fields or discretization keys replaced, then revalidated."""
    disc = dict(cfg.discretization)
    for key in list(changes):
        if key in _DISC_TYPES:
            val = changes.pop(key)
            if val is not None:
                disc[key] = val
    changes = {k: v for k, v in changes.items() if v is not None}
    new = replace(cfg, discretization=disc, **changes)
    validate(new)
    return new
