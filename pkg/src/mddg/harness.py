"""Experiment definitions and refinement studies.

Two problems are built in: pure convection of a sine product with velocity
(1,1), and a convection-diffusion problem (eps = 0.1) whose source is
manufactured so that u = exp(-t) sin(2 pi (x-t)) sin(2 pi (y-t)) is the
exact solution.  A convergence run refines mesh and time step together,
halving dt per level, and records the final-time L2 error and the observed
order between consecutive levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from mddg.basis import make_basis
from mddg.mesh import build_base_mesh, refine_uniform
from mddg.operator import Problem, assemble, l2_error, project_l2
from mddg.sparse import LinearSolver, SolverFailure
from mddg.timeint import (
    BlowUpError,
    builtin_gauss_legendre6,
    builtin_mdrk6,
    builtin_two_point_schemes,
    integrate,
)

TWO_PI = 2.0 * math.pi

PROBLEM_NAMES = ("convection", "convection_diffusion")


def default_eta(p: int) -> float:
    """Interior-penalty default, above the coercivity threshold per degree.

    On the diagonal-split right-triangle hierarchy the threshold sits just
    above p (p + 1), so 20 covers p <= 3 but p = 4 needs more than 21 and
    p = 5 more than 31; below it the operator loses negative
    semi-definiteness and implicit runs can amplify.
    """
    if p <= 3:
        return 20.0
    return 30.0 if p == 4 else 40.0


def problem_convection() -> Problem:
    """Constant advection of sin(2 pi x) sin(2 pi y) with c = (1,1), eps = 0.

    The exact solution is the initial condition transported along c; after
    one time unit it returns to the initial state.
    """

    def exact(x, y, t):
        return np.sin(TWO_PI * (x - t)) * np.sin(TWO_PI * (y - t))

    return Problem(
        velocity=np.array([1.0, 1.0]),
        epsilon=0.0,
        initial=lambda x, y: exact(x, y, 0.0),
        exact=exact,
        t_end=1.0,
        name="convection",
    )


def _decaying_wave(x, y, t):
    return np.exp(-t) * np.sin(TWO_PI * (x - t)) * np.sin(TWO_PI * (y - t))


def _decaying_wave_dt(x, y, t):
    e = np.exp(-t)
    sx = np.sin(TWO_PI * (x - t))
    cx = np.cos(TWO_PI * (x - t))
    sy = np.sin(TWO_PI * (y - t))
    cy = np.cos(TWO_PI * (y - t))
    return -e * (sx * sy + TWO_PI * (cx * sy + sx * cy))


def _decaying_wave_dtt(x, y, t):
    e = np.exp(-t)
    sx = np.sin(TWO_PI * (x - t))
    cx = np.cos(TWO_PI * (x - t))
    sy = np.sin(TWO_PI * (y - t))
    cy = np.cos(TWO_PI * (y - t))
    w = TWO_PI
    return e * (sx * sy + 2 * w * (cx * sy + sx * cy) - 2 * w**2 * sx * sy + 2 * w**2 * cx * cy)


def problem_convection_diffusion(epsilon: float = 0.1) -> Problem:
    """Manufactured convection-diffusion problem, c = (1,1).

    With u = exp(-t) sin(2 pi (x-t)) sin(2 pi (y-t)) one has
    u_t + c.grad u = -u and laplace u = -8 pi^2 u, so the source closes to
    g = (8 pi^2 eps - 1) u; its time derivatives scale u_t and u_tt.
    """
    factor = 8.0 * math.pi**2 * epsilon - 1.0
    return Problem(
        velocity=np.array([1.0, 1.0]),
        epsilon=epsilon,
        initial=lambda x, y: _decaying_wave(x, y, 0.0),
        source=lambda x, y, t: factor * _decaying_wave(x, y, t),
        source_t=lambda x, y, t: factor * _decaying_wave_dt(x, y, t),
        source_tt=lambda x, y, t: factor * _decaying_wave_dtt(x, y, t),
        exact=_decaying_wave,
        t_end=1.0,
        name="convection_diffusion",
    )


def make_problem(name: str) -> Problem:
    if name == "convection":
        return problem_convection()
    if name == "convection_diffusion":
        return problem_convection_diffusion()
    raise ValueError(f"unknown problem {name!r}")


_METHODS = None


def method_registry() -> dict:
    """Registered time integrators keyed by CLI name."""
    global _METHODS
    if _METHODS is None:
        tp = builtin_two_point_schemes()
        _METHODS = {s.label: s for s in tp}
        _METHODS["mdrk6"] = builtin_mdrk6()
        _METHODS["gl6"] = builtin_gauss_legendre6()
    return _METHODS


class ConfigError(ValueError):
    """Malformed run configuration."""


@dataclass
class RunConfig:
    """Settings of one study: problem, discretization, method, solver."""

    problem: str = "convection"
    p: int = 1
    method: str = "tp3"
    dt0: float = 0.25
    levels: int = 5
    eta: Optional[float] = None
    solver: str = "gmres"
    gmres_rtol: float = 1e-10
    gmres_restart: int = 60
    gmres_maxit: int = 5000
    gmres_fallback: bool = True
    ilu_level: int = 2
    level: int = 0  # single-run level for `solve`
    output: Optional[str] = None

    def __post_init__(self):
        if self.problem not in PROBLEM_NAMES:
            raise ConfigError(f"unknown problem {self.problem!r}")
        if self.method not in method_registry():
            raise ConfigError(f"unknown method {self.method!r}")
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        if self.dt0 <= 0:
            raise ConfigError("dt0 must be positive")
        if self.solver not in ("gmres", "direct"):
            raise ConfigError(f"unknown solver {self.solver!r}")
        if not 0 <= self.p <= 5:
            raise ConfigError("p must lie in 0..5")

    def resolved_eta(self) -> float:
        return self.eta if self.eta is not None else default_eta(self.p)

    def linear_solver(self) -> LinearSolver:
        return LinearSolver(
            kind=self.solver,
            rtol=self.gmres_rtol,
            restart=self.gmres_restart,
            maxit=self.gmres_maxit,
            ilu_level=self.ilu_level,
            fallback=self.gmres_fallback,
        )


_CONFIG_TYPES = {
    "problem": str,
    "p": int,
    "method": str,
    "dt0": float,
    "levels": int,
    "eta": float,
    "solver": str,
    "gmres_rtol": float,
    "gmres_restart": int,
    "gmres_maxit": int,
    "gmres_fallback": bool,
    "ilu_level": int,
    "level": int,
    "output": str,
}


def _parse_bool(text):
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_config_text(text: str) -> RunConfig:
    """Parse `key = value` lines; `#` starts a comment; unknown keys are errors."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _CONFIG_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        typ = _CONFIG_TYPES[key]
        try:
            values[key] = _parse_bool(val) if typ is bool else typ(val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from exc
    return RunConfig(**values)


def parse_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


@dataclass
class ReportRow:
    level: int
    h: float
    dt: float
    ndof: int
    l2_error: float
    observed_order: Optional[float]
    note: str = ""


@dataclass
class ConvergenceReport:
    """Per-level errors and observed orders of one refinement study."""

    config: RunConfig
    rows: list = field(default_factory=list)
    solver_stats: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def final_order(self) -> Optional[float]:
        orders = [r.observed_order for r in self.rows if r.observed_order is not None]
        return orders[-1] if orders else None

    @property
    def errors(self) -> list:
        return [r.l2_error for r in self.rows]


def mesh_hierarchy(levels: int):
    meshes = [build_base_mesh()]
    while len(meshes) < levels:
        meshes.append(refine_uniform(meshes[-1]))
    return meshes


def run_convergence(cfg: RunConfig) -> ConvergenceReport:
    """Refinement study: level L uses mesh level L and dt = dt0 / 2^L.

    Solver failures and blow-ups abort the affected level with a diagnostic
    row (NaN error) and are listed in the report's failures.
    """
    problem = make_problem(cfg.problem)
    basis = make_basis(cfg.p)
    method = method_registry()[cfg.method]
    eta = cfg.resolved_eta()
    report = ConvergenceReport(config=cfg)
    prev_error = None
    for level, mesh in enumerate(mesh_hierarchy(cfg.levels)):
        dt = cfg.dt0 / 2**level
        ndof = mesh.n_elements * basis.n_modes
        op = assemble(mesh, basis, problem, eta)
        w0 = project_l2(mesh, basis, problem.initial)
        stats = []
        try:
            w = integrate(
                op,
                method,
                w0,
                0.0,
                problem.t_end,
                dt,
                solver=cfg.linear_solver(),
                stats_out=stats,
            )
            err = l2_error(mesh, basis, w, problem.exact, problem.t_end)
            note = ""
        except (SolverFailure, BlowUpError) as exc:
            err = float("nan")
            note = f"{type(exc).__name__}: {exc}"
            report.failures.append((level, exc))
        report.solver_stats.append(stats)
        order = None
        if prev_error is not None and math.isfinite(err) and err > 0 and prev_error > 0:
            order = math.log2(prev_error / err)
        report.rows.append(
            ReportRow(
                level=level,
                h=mesh.h_max,
                dt=dt,
                ndof=ndof,
                l2_error=err,
                observed_order=order,
                note=note,
            )
        )
        prev_error = err if math.isfinite(err) else None
    return report


CSV_HEADER = "level,h,dt,ndof,l2_error,observed_order"


def format_report(report: ConvergenceReport) -> str:
    lines = [CSV_HEADER]
    for r in report.rows:
        order = "" if r.observed_order is None else f"{r.observed_order:.17g}"
        lines.append(f"{r.level},{r.h:.17g},{r.dt:.17g},{r.ndof},{r.l2_error:.17g},{order}")
    return "\n".join(lines) + "\n"


def write_report(report: ConvergenceReport, path) -> None:
    """CSV with 17-significant-digit values; the order cell is empty on level 0."""
    with open(path, "w") as fh:
        fh.write(format_report(report))
