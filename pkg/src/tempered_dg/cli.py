"""Command-line drivers: convergence studies, adaptive runs, property checks.

Configuration files are flat ASCII ``key = value`` lists with dotted section
prefixes, for instance::

    problem.name = poly2d
    problem.alpha = 0.5
    discretization.degree = 1
    mesh.resolutions = 4, 8, 16
"""

from __future__ import annotations

import argparse
import csv
import inspect
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .adapt import EVOLUTION_QUAD, AdaptConfig, adapt_evolution, adapt_stationary, final_error, stationary_solve
from .assembly import QuadratureSettings, assemble_load, build_system
from .dg_space import DgSpace, l2_error, write_solution
from .errors import ConfigError, InvalidInputError, TemperedDGError
from .estimate import error_norms
from .mesh import Mesh, build_interval_mesh, build_structured_tri_mesh, uniform_refine, write_mesh
from .problems import PROBLEMS, Problem, make_problem
from .solver import initial_state, solve_stationary, step_backward_euler
from .svgplot import loglog_svg, mesh_svg

__all__ = [
    "ProblemConfig",
    "parse_config",
    "load_config",
    "manufactured_rhs",
    "convergence_order",
    "run_experiment",
    "main",
]

log = logging.getLogger("tempered_dg")

MESH_NOTE = "# mesh family: structured right-triangle meshes (n x n cells of the rectangle, one diagonal each), refined by newest-vertex bisection"
STATIONARY_COLUMNS = ("iteration", "K", "dof", "L2_error", "energy_error", "eta", "I_eff")
EVOLUTION_COLUMNS = ("step", "t", "tau", "K", "eta_time1", "eta_time2", "eta_space")
CONVERGENCE_COLUMNS = ("level", "K", "h", "dof", "steps", "L2_error", "order")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ProblemConfig:
    """Everything a run needs; parsed from the flat config format."""

    name: str
    alpha: float | None = None
    beta: float | None = None
    gamma: float | None = None
    lam: float | None = None
    kappa1: float | None = None
    kappa2: float | None = None
    b: tuple | None = None
    domain: tuple | None = None
    T: float | None = None
    degree: int = 1
    time_rule: str = "h_power"
    time_exponent: float | None = None
    tau: float | None = None
    mesh_type: str | None = None
    resolutions: tuple = (4, 8, 16)
    quad_levels: int = 1
    scheme: str = "energy"
    error_h: float | None = None
    compare_uniform: bool = False
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    out: str = "out"

    def problem(self) -> Problem:
        kw = {}
        if self.alpha is not None:
            kw["alpha"] = self.alpha
        if self.beta is not None:
            kw["beta"] = self.beta
        if self.gamma is not None:
            kw["gam"] = self.gamma
        try:
            p = make_problem(self.name, **kw)
        except TypeError as exc:
            raise ConfigError(f"problem {self.name!r} does not accept {sorted(kw)}: {exc}") from None
        over = {k: getattr(self, k) for k in ("lam", "kappa1", "kappa2", "b") if getattr(self, k) is not None}
        if over:
            p = p.with_params(**over)
        if self.domain is not None and not np.allclose(self.domain, p.domain):
            raise ConfigError(f"problem {self.name!r} is posed on {p.domain}, not {self.domain}")
        if self.T is not None:
            p = replace(p, T=self.T, _cache={})
        return p

    @property
    def quad(self) -> QuadratureSettings:
        return QuadratureSettings(levels=self.quad_levels)

    def mesh(self, n: int, problem: Problem) -> Mesh:
        kind = self.mesh_type or ("interval" if problem.dim == 1 else "structured")
        d = problem.domain
        if kind == "interval":
            if problem.dim != 1:
                raise ConfigError("interval meshes need a 1D problem")
            return build_interval_mesh(d[0], d[1], n)
        if kind == "structured":
            if problem.dim != 2:
                raise ConfigError("structured triangle meshes need a 2D problem")
            return build_structured_tri_mesh(d, n, n)
        raise ConfigError(f"unknown mesh type {kind!r}")


def _float(key: str, v: str) -> float:
    try:
        x = float(v)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {v!r}") from None
    if not math.isfinite(x):
        raise ConfigError(f"{key}: must be finite")
    return x


def _int(key: str, v: str) -> int:
    try:
        return int(v)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {v!r}") from None


def _floats(key: str, v: str) -> tuple:
    return tuple(_float(key, s) for s in v.replace(",", " ").split())


def _bool(key: str, v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {v!r}")


_ADAPT_TYPES = {f.name: f.type for f in fields(AdaptConfig)}


def parse_config(text: str) -> ProblemConfig:
    """Parse the flat ``section.key = value`` format; unknown keys are errors."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        k, v = (t.strip() for t in s.split("=", 1))
        if not k or not v:
            raise ConfigError(f"line {lineno}: empty key or value")
        if k in raw:
            raise ConfigError(f"line {lineno}: duplicate key {k!r}")
        raw[k] = v
    if "problem.name" not in raw:
        raise ConfigError("problem.name is required")
    name = raw.pop("problem.name")
    if name not in PROBLEMS:
        raise ConfigError(f"unknown problem {name!r}; known: {sorted(PROBLEMS)}")
    kw: dict = {"name": name}
    adapt_kw: dict = {}
    for k, v in raw.items():
        sec, _, key = k.partition(".")
        if sec == "problem" and key in ("alpha", "beta", "gamma", "lam", "kappa1", "kappa2", "T"):
            kw[key] = _float(k, v)
        elif k == "problem.b":
            b = _floats(k, v)
            if len(b) != 2:
                raise ConfigError("problem.b needs two components")
            kw["b"] = b
        elif k == "problem.domain":
            d = _floats(k, v)
            if len(d) not in (2, 4):
                raise ConfigError("problem.domain needs 2 or 4 numbers")
            kw["domain"] = d
        elif k == "discretization.degree":
            kw["degree"] = _int(k, v)
        elif k == "discretization.quad_levels":
            kw["quad_levels"] = _int(k, v)
        elif k == "time.rule":
            kw["time_rule"] = v
        elif k == "time.exponent":
            kw["time_exponent"] = _float(k, v)
        elif k == "time.tau":
            kw["tau"] = _float(k, v)
        elif k == "mesh.type":
            kw["mesh_type"] = v
        elif k == "mesh.resolutions":
            kw["resolutions"] = tuple(_int(k, s) for s in v.replace(",", " ").split())
        elif k == "adapt.scheme":
            kw["scheme"] = v
        elif k == "adapt.error_h":
            kw["error_h"] = _float(k, v)
        elif k == "adapt.compare_uniform":
            kw["compare_uniform"] = _bool(k, v)
        elif sec == "adapt" and key in _ADAPT_TYPES:
            t = str(_ADAPT_TYPES[key])
            if t == "int":
                adapt_kw[key] = _int(k, v)
            elif t == "tuple":
                adapt_kw[key] = _floats(k, v)
            else:
                adapt_kw[key] = _float(k, v)
        elif k == "output.dir":
            kw["out"] = v
        else:
            raise ConfigError(f"unknown key {k!r}")
    cfg = ProblemConfig(adapt=AdaptConfig(**adapt_kw), **kw)
    _validate(cfg)
    return cfg


def _validate(cfg: ProblemConfig) -> None:
    if not 1 <= cfg.degree <= 4:
        raise ConfigError("discretization.degree must lie in 1..4")
    if cfg.quad_levels < 0:
        raise ConfigError("discretization.quad_levels must be >= 0")
    if cfg.time_rule not in ("h_power", "fixed"):
        raise ConfigError("time.rule must be 'h_power' or 'fixed'")
    if cfg.time_rule == "fixed" and not (cfg.tau and cfg.tau > 0):
        raise ConfigError("time.rule = fixed needs a positive time.tau")
    if cfg.time_exponent is not None and cfg.time_exponent <= 0:
        raise ConfigError("time.exponent must be positive")
    if not cfg.resolutions or any(r < 1 for r in cfg.resolutions):
        raise ConfigError("mesh.resolutions must be positive integers")
    if cfg.scheme not in ("energy", "dwr"):
        raise ConfigError("adapt.scheme must be 'energy' or 'dwr'")
    if cfg.T is not None and cfg.T <= 0:
        raise ConfigError("problem.T must be positive")
    if cfg.error_h is not None and cfg.error_h <= 0:
        raise ConfigError("adapt.error_h must be positive")
    try:
        cfg.problem()
    except TemperedDGError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid problem parameters: {exc}") from None


def load_config(path: str | os.PathLike) -> ProblemConfig:
    try:
        text = Path(path).read_text(encoding="ascii")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except UnicodeDecodeError:
        raise ConfigError(f"{path} is not ASCII") from None
    return parse_config(text)


# ---------------------------------------------------------------------------
# manufactured data and orders


def manufactured_rhs(name: str, params=None, **shape) -> Callable:
    """Right-hand side ``f(pts, t)`` that makes the named exact solution solve the model.

    ``params`` (a :class:`TemperedParams`) overrides the problem's coefficients;
    ``shape`` goes to the problem factory.  ``zero`` is the trivial solution.
    """
    if name == "zero":
        return lambda pts, t=0.0: np.zeros(np.asarray(pts).shape[0])
    if name not in PROBLEMS:
        raise ConfigError(f"unknown exact solution {name!r}")
    if params is not None:
        accepted = inspect.signature(PROBLEMS[name]).parameters
        shape = {**shape, "alpha": params.alpha}
        if "beta" in accepted:
            shape["beta"] = params.beta
    p = make_problem(name, **shape)
    if params is not None:
        p = p.with_params(lam=params.lam, kappa1=params.kappa1, kappa2=params.kappa2, b=params.b)
    return p.source


def convergence_order(errors: Sequence[float], h_values: Sequence[float]) -> list[float]:
    """Pairwise orders ``log(e1/e2) / log(h1/h2)``."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(h_values, dtype=float)
    if e.ndim != 1 or e.shape != h.shape or e.size < 2:
        raise InvalidInputError("need matching error and h lists of length >= 2")
    if np.any(~np.isfinite(e)) or np.any(e <= 0) or np.any(h <= 0):
        raise InvalidInputError("errors and mesh sizes must be positive")
    if np.any(h[:-1] == h[1:]):
        raise InvalidInputError("consecutive mesh sizes must differ")
    return list(np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:]))


def fitted_order(errors, h_values) -> float:
    """Least-squares slope of ``log e`` against ``log h``."""
    return float(np.polyfit(np.log(h_values), np.log(errors), 1)[0])


# ---------------------------------------------------------------------------
# convergence study


def _mesh_size(mesh: Mesh, problem: Problem) -> float:
    # h ~ sqrt(|Omega| / K) in 2D, the element length in 1D
    return problem.area / mesh.K if problem.dim == 1 else math.sqrt(problem.area / mesh.K)


def _time_steps(cfg: ProblemConfig, mesh: Mesh, T: float) -> int:
    if cfg.time_rule == "fixed":
        return max(1, int(math.ceil(T / cfg.tau - 1e-9)))
    p = cfg.time_exponent if cfg.time_exponent is not None else cfg.degree + 1
    return max(1, int(math.ceil(T / mesh.h**p - 1e-9)))


def solve_level(cfg: ProblemConfig, n: int) -> dict:
    """One mesh level of a convergence study (top-level so it pickles for --jobs)."""
    problem = cfg.problem()
    mesh = cfg.mesh(n, problem)
    sp = DgSpace(mesh, cfg.degree)
    if problem.stationary:
        system = build_system(sp, problem.params, stationary=True, quad=cfg.quad, one_sided=problem.one_sided)
        u = solve_stationary(system, problem.load_on(sp))
        steps, t = 0, 0.0
    else:
        T = problem.T
        steps = _time_steps(cfg, mesh, T)
        tau = T / steps
        system = build_system(sp, problem.params, quad=cfg.quad)
        st = initial_state(sp, problem.initial, tau)
        for _ in range(steps):
            t1 = st.t + tau
            st = step_backward_euler(st, system, assemble_load(sp, problem.source_on(sp, t1)))
        u, t = st.u, st.t
    err = l2_error(u, lambda *c: problem.exact(*c, t=t))
    return {"K": mesh.K, "h": _mesh_size(mesh, problem), "dof": sp.ndof, "steps": steps, "L2_error": err,
            "mesh": mesh, "u": u}


def run_convergence(cfg: ProblemConfig, out: Path, jobs: int = 1) -> list[dict]:
    problem = cfg.problem()
    if jobs > 1 and len(cfg.resolutions) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(solve_level, [cfg] * len(cfg.resolutions), cfg.resolutions))
    else:
        rows = [solve_level(cfg, n) for n in cfg.resolutions]
    orders = [math.nan]
    if len(rows) > 1:
        orders += convergence_order([r["L2_error"] for r in rows], [r["h"] for r in rows])
    for i, (r, o) in enumerate(zip(rows, orders)):
        r["level"] = i
        r["order"] = o
        log.info("level %d: K=%d L2=%.4e order=%.3f", i, r["K"], r["L2_error"], o)
    out.mkdir(parents=True, exist_ok=True)
    notes = [MESH_NOTE] if problem.dim == 2 else []
    _write_csv(out / "convergence.csv", CONVERGENCE_COLUMNS, rows, notes)
    for r in rows:
        write_mesh(r["mesh"], out / f"mesh_level{r['level']}.txt")
        write_solution(r["u"], out / f"solution_level{r['level']}.txt")
    if len(rows) > 1:
        loglog_svg(
            str(out / "convergence.svg"),
            [(f"P{cfg.degree} L2 error", [r["K"] for r in rows], [r["L2_error"] for r in rows])],
            title=f"{problem.name}: L2 error vs element count",
            ref_slope=-(cfg.degree + 1) / problem.dim,
            ref_label=f"K^-{(cfg.degree + 1) / problem.dim:g}",
        )
    return rows


# ---------------------------------------------------------------------------
# adaptive runs


def _uniform_curve(cfg: ProblemConfig, problem: Problem, mesh: Mesh, k_max: int) -> list[dict]:
    rows = []
    it = 0
    while True:
        it += 1
        u, _ = stationary_solve(problem, mesh, cfg.degree, cfg.quad)
        l2, en = error_norms(u, problem, cfg.error_h)
        rows.append({"iteration": it, "K": mesh.K, "dof": u.space.ndof, "L2_error": l2, "energy_error": en,
                     "eta": math.nan, "I_eff": math.nan})
        if mesh.K >= k_max:
            return rows
        mesh = uniform_refine(mesh)


def run_adapt_stationary(cfg: ProblemConfig, out: Path) -> list[dict]:
    problem = cfg.problem()
    if not problem.stationary:
        raise ConfigError(f"{problem.name} is an evolution problem; use adapt-evolution")
    mesh0 = cfg.mesh(cfg.resolutions[0], problem)
    out.mkdir(parents=True, exist_ok=True)
    (out / "meshes").mkdir(exist_ok=True)
    scheme = cfg.scheme

    def dump(rec):
        tag = f"{scheme}_iter{rec.iteration:03d}"
        write_mesh(rec.mesh, out / "meshes" / f"{tag}.mesh.txt")
        write_solution(rec.u, out / "meshes" / f"{tag}.solution.txt")
        mesh_svg(str(out / "meshes" / f"{tag}.svg"), rec.mesh, title=f"{scheme} iteration {rec.iteration}, K = {rec.K}")

    recs = adapt_stationary(
        problem, mesh0, cfg.adapt, scheme, cfg.degree, cfg.quad, error_h=cfg.error_h, callback=dump
    )
    rows = [r.row() for r in recs]
    notes = [MESH_NOTE] if problem.dim == 2 else []
    _write_csv(out / f"{scheme}.csv", STATIONARY_COLUMNS, rows, notes)
    if cfg.compare_uniform:
        urows = _uniform_curve(cfg, problem, mesh0, max(r["K"] for r in rows))
        _write_csv(out / "uniform.csv", STATIONARY_COLUMNS, urows, notes)
    _plot_stationary(out, problem)
    return rows


def _read_curve(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
    return [int(r["K"]) for r in rows], [float(r["L2_error"]) for r in rows]


def _plot_stationary(out: Path, problem: Problem) -> None:
    # every curve present in the output directory goes on the same figure
    series = []
    for name in ("uniform", "energy", "dwr"):
        p = out / f"{name}.csv"
        if p.exists():
            K, e = _read_curve(p)
            series.append((name, K, e))
    if series and sum(len(s[1]) for s in series) > 1:
        loglog_svg(
            str(out / "error_vs_K.svg"),
            series,
            title=f"{problem.name}: L2 error vs number of elements",
            ref_slope=-2.0,
            ref_label="K^-2",
        )


def run_adapt_evolution(cfg: ProblemConfig, out: Path) -> list[dict]:
    problem = cfg.problem()
    if problem.stationary:
        raise ConfigError(f"{problem.name} is stationary; use adapt-stationary")
    mesh0 = cfg.mesh(cfg.resolutions[0], problem)
    out.mkdir(parents=True, exist_ok=True)
    (out / "meshes").mkdir(exist_ok=True)
    quad = QuadratureSettings(levels=cfg.quad_levels) if cfg.quad_levels != 1 else EVOLUTION_QUAD
    recs, snaps = adapt_evolution(problem, mesh0, cfg.adapt, cfg.degree, quad)
    rows = [r.row() for r in recs]
    notes = [MESH_NOTE] if problem.dim == 2 else []
    _write_csv(out / "evolution.csv", EVOLUTION_COLUMNS, rows, notes)
    for t, (mesh, u) in sorted(snaps.items()):
        tag = f"t{t:.4f}"
        write_mesh(mesh, out / "meshes" / f"{tag}.mesh.txt")
        write_solution(u, out / "meshes" / f"{tag}.solution.txt")
        mesh_svg(str(out / "meshes" / f"{tag}.svg"), mesh, title=f"t = {t:g}, K = {mesh.K}")
        log.info("t=%g: K=%d L2 error %.4e", t, mesh.K, final_error(problem, u, t))
    return rows


# ---------------------------------------------------------------------------
# output


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def _write_csv(path: Path, columns: Sequence[str], rows: Sequence[dict], notes: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for n in notes:
            fh.write(n + "\r\n")
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r[c]) for c in columns])


def run_experiment(cfg: ProblemConfig, mode: str, out: str | None = None, jobs: int = 1):
    """Dispatch ``converge`` / ``adapt-stationary`` / ``adapt-evolution``."""
    dest = Path(out or cfg.out)
    if mode == "converge":
        return run_convergence(cfg, dest, jobs)
    if mode == "adapt-stationary":
        return run_adapt_stationary(cfg, dest)
    if mode == "adapt-evolution":
        return run_adapt_evolution(cfg, dest)
    raise ConfigError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# entry point


def _setup_logging() -> None:
    lvl = os.environ.get("TEMPERED_DG_LOG", "WARNING").strip().upper()
    level = int(lvl) if lvl.isdigit() else getattr(logging, lvl, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tempered-dg", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("config", help="flat key = value configuration file")
        p.add_argument("--out", default=None, help="output directory (overrides output.dir)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for independent mesh levels")
        p.add_argument("--seed", type=int, default=0, help="seed of the randomized property checks")

    common(sub.add_parser("converge", help="convergence study over mesh.resolutions"))
    p = sub.add_parser("adapt-stationary", help="adaptive refinement of a steady problem")
    common(p)
    p.add_argument("--scheme", choices=("energy", "dwr"), default=None)
    common(sub.add_parser("adapt-evolution", help="adaptive time stepping and mesh adaptation"))
    common(sub.add_parser("validate", help="run the calculus and assembly property checks"), config=False)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        if args.command == "validate":
            from .validation import run_suite

            results = run_suite(seed=args.seed)
            for r in results:
                print(r.line())
            return 0 if all(r.passed for r in results) else 1
        cfg = load_config(args.config)
        if getattr(args, "scheme", None):
            cfg.scheme = args.scheme
        run_experiment(cfg, args.command, args.out, args.jobs)
    except TemperedDGError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
