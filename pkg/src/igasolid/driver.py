"""Command-line entry point, run configuration and the benchmark cases."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.signal import find_peaks

from .assembly import AssemblyError, ManufacturedSolution, Problem
from .diagnostics import (DiagnosticsWriter, control_positions, diagnostics_row, error_norms,
                          point_displacement)
from .geometry import (AnalyticTraction, BoundaryTag, DeadLoad, GeometryError, clamp, make_annulus_disk,
                       make_cube, make_quarter_cylinder)
from .infsup import InfSupProblem, classify, sweep
from .materials import GOH, MooneyRivlin, NeoHookean
from .splines import SplineError
from .timesolver import (LINEAR_MODES, SCHUR_KINDS, LinearSolverError, NewtonOptions,
                         NonConvergenceError, StepLog, TimeIntegrator, TimeState, gen_alpha,
                         initial_state, save_checkpoint)

CASES = ("converge", "infsup", "compress", "beam", "disk", "tension", "custom")
EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    """Invalid run configuration; ``fields`` names the offending entries."""

    def __init__(self, message: str, fields: Sequence[str] = ()):
        super().__init__(message)
        self.fields = tuple(fields)


# ---------------------------------------------------------------- configuration

@dataclass
class RunConfig:
    """One benchmark run. ``None`` entries take the case defaults of :data:`CASE_DEFAULTS`.

    Attributes
    ----------
    case : str
        One of :data:`CASES`.
    p, a, b : int
        Pressure degree, velocity degree elevation and regularity elevation.
    nel : list of int
        Elements per direction.
    meshes : list of int
        Elements per side for mesh sweeps (``converge``, ``infsup``).
    dt, t_final : float
        Time step and final time; ``round(t_final / dt)`` steps are taken.
    rho_inf : float
        Spectral radius at infinity of the generalized-alpha method.
    tol_r, tol_a, l_max
        Stopping criteria of the multi-corrector.
    material : dict
        ``{"model": "neo-hookean" | "mooney-rivlin" | "goh", "rho0": ..., ...}``.
    linear, schur : str
        Linear solver mode and pressure Schur factorization, see
        :class:`~igasolid.timesolver.NewtonOptions`.
    out : str
        Output directory.
    seed : int
        Seed for randomized inputs.
    diag_every : int
        Diagnostics row interval in steps.
    params : dict
        Case-specific entries (loads, fiber angle, geometry, ...).
    """

    case: str
    p: int | None = None
    a: int | None = None
    b: int | None = None
    nel: list | None = None
    meshes: list | None = None
    dt: float | None = None
    t_final: float | None = None
    rho_inf: float | None = None
    tol_r: float | None = None
    tol_a: float | None = None
    l_max: int | None = None
    material: dict | None = None
    linear: str | None = None
    schur: str | None = None
    out: str = "out"
    seed: int = 0
    diag_every: int | None = None
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config fields {unknown}", unknown)
        if "case" not in data:
            raise ConfigError("missing required field 'case'", ["case"])
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def resolved(self) -> "RunConfig":
        """Copy with case defaults filled in and every field validated."""
        if self.case not in CASES:
            raise ConfigError(f"unknown case {self.case!r}; expected one of {CASES}", ["case"])
        data = self.to_dict()
        for key, val in CASE_DEFAULTS[self.case].items():
            if key == "params":
                data["params"] = {**val, **(data.get("params") or {})}
            elif key == "material":
                user = data.get("material") or {}
                # Defaults of another model do not apply.
                base = val if user.get("model", val["model"]) == val["model"] else {}
                data["material"] = {**base, **user}
            elif data.get(key) is None:
                data[key] = val
        for key, val in GLOBAL_DEFAULTS.items():
            if data.get(key) is None:
                data[key] = val
        cfg = RunConfig(**data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        bad = []
        for name in ("p", "a"):
            v = getattr(self, name)
            if v is not None and (not isinstance(v, int) or v < 1):
                bad.append(name)
        if self.b is not None and (not isinstance(self.b, int) or self.b < 0
                                   or (self.a is not None and self.b > self.a)):
            bad.append("b")
        for name in ("dt", "t_final", "tol_r", "tol_a"):
            v = getattr(self, name)
            if v is not None and (not isinstance(v, (int, float)) or not v > 0):
                bad.append(name)
        if self.rho_inf is not None and not 0.0 <= self.rho_inf <= 1.0:
            bad.append("rho_inf")
        for name in ("l_max", "diag_every"):
            v = getattr(self, name)
            if v is not None and (not isinstance(v, int) or v < 1):
                bad.append(name)
        if self.nel is not None and (len(self.nel) != 3 or any(not isinstance(n, int) or n < 1
                                                                  for n in self.nel)):
            bad.append("nel")
        if self.meshes is not None and (len(self.meshes) == 0 or any(
                not isinstance(n, int) or n < 1 for n in self.meshes)):
            bad.append("meshes")
        if self.linear is not None and self.linear not in LINEAR_MODES:
            bad.append("linear")
        if self.schur is not None and self.schur not in SCHUR_KINDS:
            bad.append("schur")
        if self.material is not None:
            try:
                make_material(self.material)
            except (ConfigError, TypeError, ValueError):
                bad.append("material")
        if bad:
            raise ConfigError(f"invalid config fields {bad}", bad)
        if self.case in TIME_CASES:
            missing = [n for n in ("p", "a", "b", "dt", "t_final") if getattr(self, n) is None]
            if missing:
                raise ConfigError(f"case {self.case!r} requires {missing}", missing)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def newton_options(self) -> NewtonOptions:
        return NewtonOptions(self.tol_r, self.tol_a, self.l_max, linear=self.linear, schur=self.schur,
                             precond="lu" if self.linear == "gmres" and self.params.get("lu_precond")
                             else "mass-schur",
                             policy=str(self.params.get("policy", "full")),
                             refresh_ratio=float(self.params.get("refresh_ratio", 0.2)))


TIME_CASES = ("converge", "compress", "beam", "disk", "tension", "custom")

GLOBAL_DEFAULTS = {"rho_inf": 0.5, "l_max": 20, "diag_every": 1, "linear": "direct",
                   "schur": "auto", "tol_r": 1e-8, "tol_a": 1e-8}

BEAM_E = 1.7e7

CASE_DEFAULTS: dict[str, dict] = {
    "converge": {"p": 1, "a": 1, "b": 0, "meshes": [4, 8], "dt": 1e-3 / 16, "t_final": 1e-3,
                 "tol_r": 1e-10, "tol_a": 1e-12, "linear": "gmres",
                 "material": {"model": "neo-hookean", "c1": 1.0, "rho0": 1.0}},
    "infsup": {"meshes": [2, 4, 8],
               "params": {"geometry": "cube", "degrees": [1, 2], "pairs": [[1, 0], [1, 1]],
                          "clamped": False}},
    "compress": {"p": 2, "a": 1, "b": 0, "nel": [4, 4, 4], "dt": 5e-3, "t_final": 1.0,
                 "tol_r": 1e-3, "tol_a": 1e-6, "linear": "direct",
                 "material": {"model": "neo-hookean", "c1": 8.0194e7, "rho0": 1.0e3},
                 "params": {"load": 3.2e8, "ramp": 1.0, "policy": "modified"}},
    "beam": {"p": 1, "a": 1, "b": 0, "nel": [2, 2, 12], "dt": 2e-4, "t_final": 1.9,
             "linear": "mass-schur", "schur": "dense", "diag_every": 10,
             "material": {"model": "mooney-rivlin", "c1": BEAM_E / 6, "c2": BEAM_E / 6, "rho0": 1.1e3},
             "params": {"v0": 5.0 / 3.0, "length": 1.0, "height": 6.0}},
    "disk": {"p": 2, "a": 1, "b": 0, "nel": [32, 4, 4], "dt": 2e-4, "t_final": 1.0,
             "linear": "mass-schur", "diag_every": 10,
             "material": {"model": "neo-hookean", "c1": 7.5, "rho0": 10.0},
             "params": {"omega": 1.0, "Ri": 0.5, "Ro": 1.5, "H": 1.0, "refresh_ratio": 0.01}},
    "tension": {"p": 1, "a": 1, "b": 0, "nel": [2, 2, 2], "dt": 0.1, "t_final": 10.0,
                "tol_r": 1e-8, "tol_a": 1e-10, "linear": "direct",
                "material": {"model": "goh", "c1": 7.64e3, "k1": 9.966e5, "k2": 524.6, "kd": 0.226,
                             "rho0": 1.0e3},
                "params": {"phi_deg": 49.98, "load": 4.0e3, "ramp": 5.0}},
    "custom": {"p": 1, "a": 1, "b": 0, "nel": [2, 2, 2], "dt": 1e-2, "t_final": 0.1,
               "material": {"model": "neo-hookean", "c1": 1.0, "rho0": 1.0},
               "params": {"geometry": {"kind": "cube", "lengths": [1.0, 1.0, 1.0]}, "bcs": [],
                          "velocity": [0.0, 0.0, 0.0], "omega": 0.0}},
}


def make_material(spec: dict):
    """Material model from a config entry."""
    spec = dict(spec)
    model = spec.pop("model", None)
    ctor = {"neo-hookean": NeoHookean, "mooney-rivlin": MooneyRivlin, "goh": GOH}.get(model)
    if ctor is None:
        raise ConfigError(f"unknown material model {model!r}", ["material"])
    for key, val in spec.items():
        if key in ("c1", "c2", "rho0", "k2") and not (isinstance(val, (int, float)) and val > 0):
            raise ConfigError(f"material parameter {key} must be positive", ["material"])
    if "fibers" in spec:
        spec["fibers"] = tuple(tuple(f) for f in spec["fibers"])
    return ctor(**spec)


# ---------------------------------------------------------------- shared run loop

@dataclass
class RunResult:
    """Outcome of a time-marching case."""

    final: TimeState
    rows: list
    logs: list[StepLog]
    problem: Problem
    seconds: float


def march(problem: Problem, cfg: RunConfig, ts: TimeState, out: Path | None,
          observer: Callable[[TimeState], None] | None = None) -> RunResult:
    """Run ``cfg.n_steps`` steps, streaming diagnostics to ``out/diag.csv``."""
    params = gen_alpha(cfg.rho_inf)
    integ = TimeIntegrator(problem, params, cfg.dt, cfg.newton_options())
    writer = DiagnosticsWriter(out / "diag.csv") if out is not None else None
    rows, logs = [], []
    t0 = time.perf_counter()

    def record(ts: TimeState, log: StepLog | None):
        row = diagnostics_row(problem, ts.t, ts.state, *((log.iterations, log.res0, log.resk)
                                                          if log else ()))
        rows.append(row)
        if writer:
            writer.write(row)

    try:
        record(ts, None)
        if observer:
            observer(ts)
        for n in range(cfg.n_steps):
            ts, log = integ.step(ts)
            logs.append(log)
            if (n + 1) % cfg.diag_every == 0 or n + 1 == cfg.n_steps:
                record(ts, log)
            if observer:
                observer(ts)
    finally:
        if writer:
            writer.close()
    if out is not None:
        save_checkpoint(out / "state.chk", ts, {"case": cfg.case})
    return RunResult(ts, rows, logs, problem, time.perf_counter() - t0)


def _newton_summary(logs: Sequence[StepLog]) -> dict:
    its = [lg.iterations for lg in logs]
    return {"max_iterations": max(its, default=0), "mean_iterations": float(np.mean(its)) if its else 0.0,
            "steps": len(its)}


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------- manufactured solution

def manufactured_problem(p: int, a: int, b: int, n: int, ms: ManufacturedSolution | None = None
                         ) -> Problem:
    """Unit cube clamped on the four faces normal to Y and Z, analytic tractions on X = 0, 1."""
    ms = ms or ManufacturedSolution()
    tr = AnalyticTraction(ms.traction)
    bcs = [clamp("xi2_min"), clamp("xi2_max"), clamp("xi3_min"), clamp("xi3_max"),
           BoundaryTag("xi1_min", traction=tr), BoundaryTag("xi1_max", traction=tr)]
    return Problem.build(make_cube(p=p), p, a, b, NeoHookean(ms.c1, ms.rho0), bcs,
                         nel=(n, n, n), body_force=ms.body_force)


@dataclass
class ManufacturedRun:
    """Final-time errors of one manufactured-solution run.

    ``stage_p_l2`` measures the pressure at ``t_{n+alpha_f}``, the time level at
    which the discrete equations hold the pressure, against the analytic
    pressure at that time.
    """

    n: int
    n_steps: int
    u_l2: float
    u_h1: float
    p_l2: float
    p_h1: float
    stage_p_l2: float
    logs: list
    seconds: float
    krylov: list


def manufactured_run(p: int, a: int, b: int, n: int, n_steps: int, t_final: float,
                     rho_inf: float = 0.5, options: NewtonOptions | None = None,
                     problem: Problem | None = None, ms: ManufacturedSolution | None = None
                     ) -> ManufacturedRun:
    """March the manufactured solution from rest to ``t_final`` and measure the errors."""
    ms = ms or ManufacturedSolution()
    prob = problem or manufactured_problem(p, a, b, n, ms)
    params = gen_alpha(rho_inf)
    dt = t_final / n_steps
    options = options or NewtonOptions(1e-10, 1e-12, 20, linear="gmres")
    integ = TimeIntegrator(prob, params, dt, options)
    t0 = time.perf_counter()
    ts = initial_state(prob, params=params, dt=dt)
    logs = []
    p_prev = ts.state.p.copy()
    for _ in range(n_steps):
        p_prev = ts.state.p.copy()
        ts, log = integ.step(ts)
        logs.append(log)
    seconds = time.perf_counter() - t0
    e = error_norms(prob, ts.state, t_final, ms.U, ms.gradU, ms.P, ms.gradP)
    stage = ts.state.copy()
    stage.p = p_prev + params.alpha_f * (ts.state.p - p_prev)
    es = error_norms(prob, stage, t_final - (1.0 - params.alpha_f) * dt, ms.U, ms.gradU, ms.P, ms.gradP)
    return ManufacturedRun(n, n_steps, e.u_l2, e.u_h1, e.p_l2, e.p_h1, es.p_l2, logs, seconds,
                           list(integ.krylov_iterations))


def observed_rates(ns: Sequence[int], errors: Sequence[float]) -> list[float]:
    """Pairwise rates ``log(e_i / e_j) / log(n_j / n_i)`` of consecutive meshes."""
    return [math.log(errors[i] / errors[i + 1]) / math.log(ns[i + 1] / ns[i])
            for i in range(len(ns) - 1)]


ERROR_COLUMNS = ("nel", "n_steps", "dt", "u_l2", "u_h1", "p_l2", "p_h1", "stage_p_l2", "seconds")


def converge_case(cfg: RunConfig, out: Path | None = None) -> dict:
    """Manufactured-solution convergence study over ``cfg.meshes``.

    ``params["steps"]`` optionally lists the step count per mesh; otherwise
    every mesh uses ``cfg.dt``.
    """
    steps = cfg.params.get("steps") or [cfg.n_steps] * len(cfg.meshes)
    if len(steps) != len(cfg.meshes):
        raise ConfigError("params.steps must match meshes", ["params"])
    runs = []
    newton_rows = []
    for n, N in zip(cfg.meshes, steps):
        r = manufactured_run(cfg.p, cfg.a, cfg.b, n, N, cfg.t_final, cfg.rho_inf, cfg.newton_options())
        runs.append(r)
        for k, lg in enumerate(r.logs):
            newton_rows.append([n, k + 1, lg.iterations, ";".join(repr(x) for x in lg.residuals)])
    ns = [r.n for r in runs]
    rates = {key: observed_rates(ns, [getattr(r, key) for r in runs])
             for key in ("u_l2", "u_h1", "p_l2", "stage_p_l2")}
    if out is not None:
        _write_csv(out / "errors.csv", ERROR_COLUMNS,
                   [[r.n, r.n_steps, cfg.t_final / r.n_steps] + [repr(getattr(r, c)) for c in ERROR_COLUMNS[3:]]
                    for r in runs])
        _write_csv(out / "newton.csv", ("nel", "step", "iterations", "residuals"), newton_rows)
    return {"errors": [{c: getattr(r, c) for c in ("n", "n_steps", "u_l2", "u_h1", "p_l2", "p_h1",
                                                   "stage_p_l2", "seconds")} for r in runs],
            "rates": rates,
            "newton": _newton_summary([lg for r in runs for lg in r.logs])}


# ---------------------------------------------------------------- other cases

def infsup_case(cfg: RunConfig, out: Path | None = None) -> dict:
    prm = cfg.params
    cells = [InfSupProblem(prm["geometry"], p, a, b, n, clamped=bool(prm["clamped"]))
             for p in prm["degrees"] for a, b in prm["pairs"] for n in cfg.meshes]
    rows = sweep(cells, out / "infsup.csv" if out is not None else None)
    verdict = classify(rows)
    return {"rows": rows,
            "families": {f"{g}/p{p}/a{a}/b{b}": v for (g, p, a, b), v in verdict.items()},
            "all_pass": all(v["pass"] for v in verdict.values())}


def compress_problem(cfg: RunConfig) -> Problem:
    """Quarter block on the unit cube: symmetry on X = 0, Y = 0, Z = 0, top held horizontally.

    A dead load ``params["load"]`` (Pa) acts downward on ``[0, 1/2]^2`` of the top
    face, ramped linearly over ``params["ramp"]`` seconds.
    """
    prm = cfg.params
    n1 = cfg.nel[0]
    if n1 % 2 or cfg.nel[1] % 2:
        raise ConfigError("the loaded quarter needs an even element count in X and Y", ["nel"])
    bcs = [BoundaryTag("xi1_min", (True, False, False)), BoundaryTag("xi2_min", (False, True, False)),
           BoundaryTag("xi3_min", (False, False, True)),
           BoundaryTag("xi3_max", (True, True, False),
                       traction=DeadLoad((0.0, 0.0, -float(prm["load"])), ((0.0, 0.5), (0.0, 0.5))),
                       ramp=float(prm["ramp"]))]
    return Problem.build(make_cube(p=1), cfg.p, cfg.a, cfg.b, make_material(cfg.material), bcs,
                         nel=tuple(cfg.nel))


def compress_case(cfg: RunConfig, out: Path | None = None) -> dict:
    prob = compress_problem(cfg)
    tip = []

    def observe(ts):
        tip.append((ts.t, float(point_displacement(prob, ts.state.u, (0.0, 0.0, 1.0))[2])))
    res = march(prob, cfg, initial_state(prob, params=gen_alpha(cfg.rho_inf), dt=cfg.dt), out, observe)
    if out is not None:
        _write_csv(out / "tip.csv", ("t", "u_z"), [[repr(t), repr(u)] for t, u in tip])
    return {"compression_percent": abs(tip[-1][1]) * 100.0, "tip_uz": tip[-1][1],
            "newton": _newton_summary(res.logs), "seconds": res.seconds}


def beam_problem(cfg: RunConfig) -> Problem:
    """Cantilever ``L x L x height`` clamped at Z = 0."""
    L, Hh = float(cfg.params["length"]), float(cfg.params["height"])
    return Problem.build(make_cube((L, L, Hh), p=1), cfg.p, cfg.a, cfg.b, make_material(cfg.material),
                         [clamp("xi3_min")], nel=tuple(cfg.nel))


def energy_period(t: np.ndarray, ke: np.ndarray, window: float = 0.1) -> float:
    """Period of the kinetic-energy oscillation, treating ``t[0]`` as a maximum.

    Maxima and minima with a prominence of at least half the energy range are
    located by a least-squares parabola over ``+-window`` rough periods, which
    suppresses higher-mode ripple. The period is twice the least-squares slope
    of the extremum times against their index.
    """
    t, ke = np.asarray(t, float), np.asarray(ke, float)
    if len(ke) < 3:
        return float("nan")
    prom = 0.5 * (ke.max() - ke.min())
    idx = np.sort(np.r_[find_peaks(ke, prominence=prom)[0], find_peaks(-ke, prominence=prom)[0]])
    if idx.size == 0:
        return float("nan")
    rough = 2.0 * float(np.mean(np.diff(np.r_[t[0], t[idx]])))
    w = max(1, int(round(window * rough / np.median(np.diff(t)))))
    times = [t[0]]
    for i in idx:
        lo, hi = max(i - w, 0), min(i + w + 1, len(t))
        c = np.polyfit(t[lo:hi] - t[i], ke[lo:hi], 2)
        times.append(t[i] - c[1] / (2 * c[0]))
    return 2.0 * float(np.polyfit(np.arange(len(times)), times, 1)[0])


def beam_case(cfg: RunConfig, out: Path | None = None) -> dict:
    """Bending vibration started by ``V = (v0 Z / L, 0, 0)``.

    The reported period is that of the kinetic-energy oscillation, half the
    period of the tip displacement.
    """
    prob = beam_problem(cfg)
    X = control_positions(prob)
    v0 = np.zeros_like(X)
    v0[:, 0] = float(cfg.params["v0"]) * X[:, 2] / float(cfg.params["length"])
    ts0 = initial_state(prob, v0=v0, params=gen_alpha(cfg.rho_inf), dt=cfg.dt)
    res = march(prob, cfg, ts0, out)
    t = np.array([r.t for r in res.rows])
    ke = np.array([r.ke for r in res.rows])
    te = np.array([r.te for r in res.rows])
    return {"period": energy_period(t, ke), "initial_energy": float(te[0]),
            "max_rel_energy_error": float(np.max(np.abs(te - te[0])) / te[0]),
            "newton": _newton_summary(res.logs), "seconds": res.seconds}


def disk_problem(cfg: RunConfig) -> Problem:
    prm = cfg.params
    patch = make_annulus_disk(prm["Ri"], prm["Ro"], prm["H"], tuple(cfg.nel))
    return Problem.build(patch, cfg.p, cfg.a, cfg.b, make_material(cfg.material), [])


def disk_case(cfg: RunConfig, out: Path | None = None) -> dict:
    """Free spinning annulus with ``V = omega (-Y, X, 0)``; no loads or constraints."""
    prm = cfg.params
    prob = disk_problem(cfg)
    X = control_positions(prob)
    w = float(prm["omega"])
    v0 = np.stack([-w * X[:, 1], w * X[:, 0], np.zeros(len(X))], axis=1)
    ts0 = initial_state(prob, v0=v0, params=gen_alpha(cfg.rho_inf), dt=cfg.dt)
    res = march(prob, cfg, ts0, out)
    rho0 = prob.rho0
    Iz = rho0 * 0.5 * np.pi * (prm["Ro"] ** 4 - prm["Ri"] ** 4) * prm["H"]
    lin = np.array([r.linear for r in res.rows])
    ang = np.array([r.angular for r in res.rows])
    te = np.array([r.te for r in res.rows])
    return {"initial_kinetic": res.rows[0].ke, "analytic_kinetic": 0.5 * Iz * w**2,
            "analytic_Lz": Iz * w,
            "max_abs_linear": float(np.abs(lin).max()),
            "max_abs_Lxy": float(np.abs(ang[:, :2]).max()),
            "max_rel_Lz_error": float(np.abs(ang[:, 2] - Iz * w).max() / (Iz * w)),
            "max_rel_energy_error": float(np.abs(te - te[0]).max() / te[0]),
            "newton": _newton_summary(res.logs), "seconds": res.seconds}


def fiber_directions(phi_deg: float) -> tuple:
    """Two fiber families at ``+-phi`` from the X (loading) axis in the X-Y plane."""
    ph = math.radians(phi_deg)
    return ((math.cos(ph), math.sin(ph), 0.0), (math.cos(ph), -math.sin(ph), 0.0))


def tension_problem(cfg: RunConfig) -> Problem:
    """Unit cube with symmetry on X = 0, Y = 0, Z = 0 and a dead load along X on X = 1."""
    prm = cfg.params
    mat = dict(cfg.material)
    if mat.get("model") == "goh" and "fibers" not in mat:
        mat["fibers"] = fiber_directions(float(prm["phi_deg"]))
    bcs = [BoundaryTag("xi1_min", (True, False, False)), BoundaryTag("xi2_min", (False, True, False)),
           BoundaryTag("xi3_min", (False, False, True)),
           BoundaryTag("xi1_max", traction=DeadLoad((float(prm["load"]), 0.0, 0.0)),
                       ramp=float(prm["ramp"]))]
    return Problem.build(make_cube(p=1), cfg.p, cfg.a, cfg.b, make_material(mat), bcs,
                         nel=tuple(cfg.nel))


def tension_case(cfg: RunConfig, out: Path | None = None) -> dict:
    """Load-displacement record ``u_X`` at the corner ``(1, 0, 0)`` of the loaded face."""
    prm = cfg.params
    prob = tension_problem(cfg)
    curve = []

    def observe(ts):
        load = float(prm["load"]) * min(ts.t / float(prm["ramp"]), 1.0)
        curve.append((ts.t, load, float(point_displacement(prob, ts.state.u, (1.0, 0.0, 0.0))[0])))
    res = march(prob, cfg, initial_state(prob, params=gen_alpha(cfg.rho_inf), dt=cfg.dt), out, observe)
    if out is not None:
        _write_csv(out / "tension.csv", ("t", "load", "u_x"), [[repr(x) for x in c] for c in curve])
    return {"final_displacement": curve[-1][2], "final_load": curve[-1][1],
            "max_abs_pressure": float(np.abs(res.final.state.p).max()),
            "curve": [list(c) for c in curve], "newton": _newton_summary(res.logs),
            "seconds": res.seconds}


def _custom_patch(geo: dict):
    kind = geo.get("kind", "cube")
    if kind == "cube":
        return make_cube(tuple(geo.get("lengths", (1.0, 1.0, 1.0))), p=1)
    if kind == "cylinder":
        return make_quarter_cylinder(geo.get("Ri", 0.5), geo.get("Ro", 1.5), geo.get("H", 1.0))
    if kind == "disk":
        return make_annulus_disk(geo.get("Ri", 0.5), geo.get("Ro", 1.5), geo.get("H", 1.0), (4, 1, 1))
    raise ConfigError(f"unknown geometry kind {kind!r}", ["params"])


def custom_case(cfg: RunConfig, out: Path | None = None) -> dict:
    """User-defined patch, boundary tags and uniform or rotational initial velocity.

    ``params["bcs"]`` holds ``{"face", "fixed", "load", "box", "ramp"}`` entries with
    dead loads only.
    """
    prm = cfg.params
    bcs = []
    try:
        for tag in prm.get("bcs", []):
            load = tag.get("load")
            tr = DeadLoad(tuple(load), tag.get("box")) if load is not None else None
            bcs.append(BoundaryTag(tag["face"], tuple(bool(x) for x in tag.get("fixed", (0, 0, 0))),
                                   traction=tr, ramp=tag.get("ramp")))
    except (KeyError, TypeError, GeometryError) as exc:
        raise ConfigError(f"invalid boundary tag: {exc}", ["params"]) from None
    prob = Problem.build(_custom_patch(prm.get("geometry", {})), cfg.p, cfg.a, cfg.b,
                         make_material(cfg.material), bcs, nel=tuple(cfg.nel))
    X = control_positions(prob)
    w = float(prm.get("omega", 0.0))
    v0 = np.zeros_like(X) + np.asarray(prm.get("velocity", (0.0, 0.0, 0.0)), dtype=float)
    v0[:, 0] -= w * X[:, 1]
    v0[:, 1] += w * X[:, 0]
    v0[prob.dofmap.fixed] = 0.0
    res = march(prob, cfg, initial_state(prob, v0=v0, params=gen_alpha(cfg.rho_inf), dt=cfg.dt), out)
    return {"final_energy": res.rows[-1].te, "newton": _newton_summary(res.logs),
            "seconds": res.seconds}


CASE_RUNNERS: dict[str, Callable] = {
    "converge": converge_case, "infsup": infsup_case, "compress": compress_case,
    "beam": beam_case, "disk": disk_case, "tension": tension_case, "custom": custom_case,
}


def run_case(cfg: RunConfig) -> tuple[int, dict]:
    """Run a case and write ``summary.json`` into ``cfg.out``; returns ``(exit code, summary)``."""
    cfg = cfg.resolved()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    summary: dict = {"case": cfg.case, "status": "ok"}
    code = EXIT_OK
    t0 = time.perf_counter()
    try:
        summary.update(CASE_RUNNERS[cfg.case](cfg, out))
    except (NonConvergenceError, LinearSolverError, AssemblyError) as exc:
        summary["status"] = "solver failure"
        summary["error"] = f"{type(exc).__name__}: {exc}"
        code = EXIT_SOLVER
    summary["wall_seconds"] = time.perf_counter() - t0
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True))
    return code, summary


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


# ---------------------------------------------------------------- CLI

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="solver", description=__doc__)
    ap.add_argument("case", nargs="?", help=f"one of {', '.join(CASES)}; may come from --config")
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--p", type=int)
    ap.add_argument("--a", type=int)
    ap.add_argument("--b", type=int)
    ap.add_argument("--nel", type=int, nargs=3)
    ap.add_argument("--meshes", type=int, nargs="+")
    ap.add_argument("--dt", type=float)
    ap.add_argument("--t-final", type=float, dest="t_final")
    ap.add_argument("--rho-inf", type=float, dest="rho_inf")
    ap.add_argument("--tol-r", type=float, dest="tol_r")
    ap.add_argument("--tol-a", type=float, dest="tol_a")
    ap.add_argument("--linear", choices=LINEAR_MODES)
    ap.add_argument("--out")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        data: dict = {}
        if args.config:
            try:
                data = json.loads(Path(args.config).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc}", ["config"]) from None
            if not isinstance(data, dict):
                raise ConfigError("config must be a JSON object", ["config"])
        case = args.case if args.case is not None else data.get("case")
        if case is not None and data.get("case", case) != case:
            raise ConfigError(f"config case {data['case']!r} differs from {case!r}", ["case"])
        if case not in CASES:
            raise ConfigError(f"unknown case {case!r}; expected one of {', '.join(CASES)}", ["case"])
        data["case"] = case
        for key in ("p", "a", "b", "nel", "meshes", "dt", "t_final", "rho_inf", "tol_r", "tol_a",
                    "linear", "out"):
            val = getattr(args, key)
            if val is not None:
                data[key] = list(val) if isinstance(val, list) else val
        cfg = RunConfig.from_dict(data).resolved()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        code, summary = run_case(cfg)
    except (ConfigError, GeometryError, SplineError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps({k: v for k, v in _jsonable(summary).items()
                      if not isinstance(v, (list, dict))}, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
