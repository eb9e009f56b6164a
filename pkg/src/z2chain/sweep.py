"""Sweep orchestration: reproducible experiment definitions and persistence.

A sweep walks one axis (lambda, q, theta, or L) of the delta-parametrized
phase diagram, runs Born-sampled trajectories at every grid point, and
writes deterministic CSV/JSON outputs.  Trajectory seeds derive from
(master_seed, global index), so results are byte-identical for any worker
count.
"""

import ast
import json
import os
import time
from typing import Optional
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import IoError, MissingField, OutOfRange, UnknownKey, WrongType
from .model import PhasePoint, SimParams, derive_trajectory_seed, validate_params
from .observables import SCALAR_OBSERVABLES, average_over_trajectories, compute_observables

AXES = ("lambda", "q", "theta", "L")
ENGINES = ("dense", "mps", "pure", "auto")
_DENSE_MAX_AUTO = 8

_CONFIG_FIELDS = {
    # key: (attribute, type, default)
    "axis": ("axis", str, None),
    "values": ("values", tuple, None),
    "engine": ("engine", str, "auto"),
    "n_trajectories": ("n_trajectories", int, None),
    "observables": ("observable_list", tuple, ("kappa_ea", "kappa_2", "s_r", "i_c_renyi2")),
    "output_dir": ("output_dir", str, "."),
    "lambda": ("lam", float, 0.5),
    "q": ("q", float, 0.1),
    "delta": ("delta", float, 0.7),
    "theta_x": ("theta_x", float, 0.0),
    "theta_zz": ("theta_zz", float, 0.0),
    # direct circuit fields; when set they override the (lambda, q, delta)
    # phase-point expansion
    "lambda_x": ("lambda_x", float, None),
    "lambda_zz": ("lambda_zz", float, None),
    "q_x": ("q_x", float, None),
    "q_zz": ("q_zz", float, None),
    "L": ("L", int, 8),
    "T": ("T", int, 0),
    "boundary": ("boundary", str, "open"),
    "initial_state": ("initial_state", str, "ghz_with_reference"),
    "master_seed": ("master_seed", int, 0),
    "chi_max": ("chi_max", int, 128),
    "svd_cutoff": ("svd_cutoff", float, 1e-10),
    "workers": ("workers", int, 1),
    "dual_timing": ("dual_timing", bool, False),
}
_REQUIRED = ("axis", "values", "n_trajectories")


@dataclass(frozen=True)
class SweepSpec:
    """One validated sweep definition."""

    axis: str
    values: tuple
    n_trajectories: int
    engine: str = "auto"
    observable_list: tuple = ("kappa_ea", "kappa_2", "s_r", "i_c_renyi2")
    output_dir: str = "."
    lam: float = 0.5
    q: float = 0.1
    delta: float = 0.7
    theta_x: float = 0.0
    theta_zz: float = 0.0
    lambda_x: Optional[float] = None
    lambda_zz: Optional[float] = None
    q_x: Optional[float] = None
    q_zz: Optional[float] = None
    L: int = 8
    T: int = 0
    boundary: str = "open"
    initial_state: str = "ghz_with_reference"
    master_seed: int = 0
    chi_max: int = 128
    svd_cutoff: float = 1e-10
    workers: int = 1
    dual_timing: bool = False

    def point_params(self, value) -> SimParams:
        """SimParams of one grid point (the axis value overrides the rest)."""
        lam, q, theta_x, theta_zz, L = self.lam, self.q, self.theta_x, self.theta_zz, self.L
        if self.axis == "lambda":
            lam = float(value)
        elif self.axis == "q":
            q = float(value)
        elif self.axis == "theta":
            theta_x = theta_zz = float(value)
        elif self.axis == "L":
            L = int(value)
        point = PhasePoint(lam=lam, q=q, delta=self.delta)
        t_value = self.T if self.T > 0 else None
        params = point.to_sim_params(
            L=L,
            T=t_value,
            theta_x=theta_x,
            theta_zz=theta_zz,
            boundary=self.boundary,
            initial_state=self.initial_state,
            master_seed=self.master_seed,
        )
        direct = {
            name: getattr(self, name)
            for name in ("lambda_x", "lambda_zz", "q_x", "q_zz")
            if getattr(self, name) is not None
        }
        if direct:
            params = replace(params, **direct)
        return validate_params(params)

    def engine_for(self, params: SimParams) -> str:
        if self.engine != "auto":
            return self.engine
        return "dense" if params.L <= _DENSE_MAX_AUTO else "mps"


def _coerce(key, raw, typ):
    if typ is tuple:
        try:
            value = ast.literal_eval(raw) if isinstance(raw, str) else raw
        except (ValueError, SyntaxError):
            value = tuple(part.strip() for part in raw.split(","))
        if isinstance(value, (int, float, str)):
            value = (value,)
        return tuple(value)
    if typ is bool:
        if isinstance(raw, bool):
            return raw
        if raw in ("true", "True", "1"):
            return True
        if raw in ("false", "False", "0"):
            return False
        raise WrongType(key, "bool", raw)
    try:
        return typ(raw)
    except (TypeError, ValueError):
        raise WrongType(key, typ.__name__, raw)


def parse_config(text: str) -> SweepSpec:
    """Parse a flat key = value config (strict: unknown keys are errors)."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise WrongType(f"line {lineno}", "key = value", line)
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _CONFIG_FIELDS:
            raise UnknownKey(key)
        attr, typ, _default = _CONFIG_FIELDS[key]
        values[attr] = _coerce(key, raw, typ)
    return build_spec(values)


def build_spec(values: dict) -> SweepSpec:
    for key in _REQUIRED:
        attr = _CONFIG_FIELDS[key][0]
        if attr not in values:
            raise MissingField(key)
    kwargs = {attr: default for _k, (attr, _t, default) in _CONFIG_FIELDS.items()}
    kwargs.update(values)
    spec = SweepSpec(**kwargs)
    if spec.axis not in AXES:
        raise OutOfRange("axis", f"axis must be one of {AXES}")
    if spec.engine not in ENGINES:
        raise OutOfRange("engine", f"engine must be one of {ENGINES}")
    if not spec.values:
        raise OutOfRange("values", "values must be nonempty")
    if list(spec.values) != sorted(spec.values):
        raise OutOfRange("values", "values must be sorted")
    if not spec.observable_list:
        raise OutOfRange("observables", "observable_list must be nonempty")
    for name in spec.observable_list:
        if name not in SCALAR_OBSERVABLES:
            raise UnknownKey(f"observable {name}")
    if spec.n_trajectories < 1:
        raise OutOfRange("n_trajectories", "need at least one trajectory")
    spec.point_params(spec.values[0])
    return spec


def apply_overrides(spec_values: dict, overrides) -> dict:
    """Fold --key=value CLI overrides into raw config values (strict keys)."""
    out = dict(spec_values)
    for key, raw in overrides:
        if key not in _CONFIG_FIELDS:
            raise UnknownKey(key)
        attr, typ, _default = _CONFIG_FIELDS[key]
        out[attr] = _coerce(key, raw, typ)
    return out


def raw_config_values(text: str) -> dict:
    """Config file -> raw attribute dict (used by the CLI override path)."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise WrongType(f"line {lineno}", "key = value", line)
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _CONFIG_FIELDS:
            raise UnknownKey(key)
        attr, typ, _default = _CONFIG_FIELDS[key]
        values[attr] = _coerce(key, raw, typ)
    return values


# -- trajectory evaluation -----------------------------------------------------


def run_one_trajectory(params: SimParams, seed: int, engine: str, which,
                       chi_max=128, svd_cutoff=1e-10, dual_timing=False):
    """One Born trajectory on the requested engine; returns an ObservableSet."""
    periodic = params.boundary == "periodic"
    if engine == "dense":
        from .dense import run_trajectory_dense

        state, _ = run_trajectory_dense(params, seed)
        return compute_observables(state, which, periodic=periodic)
    from .mps import TruncationPolicy

    if engine == "pure":
        from .purestate import run_trajectory_pure as run
    else:
        from .mps import run_trajectory_mps as run

    policy = TruncationPolicy(chi_max=chi_max, svd_cutoff=svd_cutoff)
    if not dual_timing:
        state, _ = run(params, seed, policy)
        return compute_observables(state, which, periodic=periodic)
    readings = {}

    def hook(state, stage):
        readings[stage] = compute_observables(state, which, periodic=periodic)

    run(params, seed, policy, final_layer_hook=hook)
    mid, end = readings["x"], readings["zz"]
    from .observables import ObservableSet

    merged = ObservableSet()
    for name in which:
        a, b = getattr(mid, name), getattr(end, name)
        setattr(merged, name, 0.5 * (a + b))
    return merged


def _task(args):
    (point_idx, traj_idx, params, seed, engine, which, chi, cutoff, dual) = args
    obs = run_one_trajectory(params, seed, engine, which, chi, cutoff, dual)
    return point_idx, traj_idx, obs


@dataclass
class ResultRow:
    """One grid point's aggregated results (fixed column order)."""

    axis: str
    value: float
    lambda_x: float
    lambda_zz: float
    q_x: float
    q_zz: float
    theta_x: float
    theta_zz: float
    L: int
    T: int
    boundary: str
    initial_state: str
    engine: str
    chi_max: int
    n_trajectories: int
    master_seed: int
    means: dict = field(default_factory=dict)
    stderrs: dict = field(default_factory=dict)
    error: str = ""
    build_id: str = ""
    wall_time: float = 0.0


def run_sweep(spec: SweepSpec, progress=None):
    """Run every grid point; aggregation is deterministic by seed index."""
    rows = []
    for point_idx, value in enumerate(spec.values):
        t0 = time.time()
        try:
            params = spec.point_params(value)
            engine = spec.engine_for(params)
            tasks = []
            for k in range(spec.n_trajectories):
                global_idx = point_idx * spec.n_trajectories + k
                seed = derive_trajectory_seed(spec.master_seed, global_idx)
                tasks.append(
                    (point_idx, k, params, seed, engine, spec.observable_list,
                     spec.chi_max, spec.svd_cutoff, spec.dual_timing)
                )
            results = [None] * len(tasks)
            if spec.workers > 1:
                with ProcessPoolExecutor(max_workers=spec.workers) as pool:
                    for p_idx, t_idx, obs in pool.map(_task, tasks, chunksize=4):
                        results[t_idx] = obs
            else:
                for task in tasks:
                    _p, t_idx, obs = _task(task)
                    results[t_idx] = obs
            means, errs = average_over_trajectories(results, mode="sampled")
            from . import __version__

            row = ResultRow(
                build_id=__version__,
                axis=spec.axis,
                value=float(value),
                lambda_x=params.lambda_x,
                lambda_zz=params.lambda_zz,
                q_x=params.q_x,
                q_zz=params.q_zz,
                theta_x=params.theta_x,
                theta_zz=params.theta_zz,
                L=params.L,
                T=params.T,
                boundary=params.boundary,
                initial_state=params.initial_state,
                engine=engine,
                chi_max=spec.chi_max,
                n_trajectories=spec.n_trajectories,
                master_seed=spec.master_seed,
                means=means,
                stderrs=errs,
                wall_time=time.time() - t0,
            )
        except Exception as exc:  # grid-point failures are recorded, not fatal
            row = ResultRow(
                axis=spec.axis, value=float(value), lambda_x=0.0, lambda_zz=0.0,
                q_x=0.0, q_zz=0.0, theta_x=0.0, theta_zz=0.0, L=spec.L, T=spec.T,
                boundary=spec.boundary, initial_state=spec.initial_state,
                engine=spec.engine, chi_max=spec.chi_max,
                n_trajectories=spec.n_trajectories, master_seed=spec.master_seed,
                error=f"{type(exc).__name__}: {exc}", wall_time=time.time() - t0,
            )
        rows.append(row)
        if progress is not None:
            progress(row)
    return rows


# -- persistence -----------------------------------------------------------------


def csv_columns():
    cols = [
        "axis", "value", "lambda_x", "lambda_zz", "q_x", "q_zz",
        "theta_x", "theta_zz", "L", "T", "boundary", "initial_state",
        "engine", "chi_max", "n_trajectories", "master_seed",
    ]
    for name in SCALAR_OBSERVABLES:
        cols.append(f"{name}_mean")
        cols.append(f"{name}_stderr")
    cols += ["error", "build_id", "wall_time"]
    return cols


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def row_to_csv(row: ResultRow) -> str:
    fields = []
    for col in csv_columns():
        if col.endswith("_mean"):
            fields.append(_fmt(row.means.get(col[:-5], "")))
        elif col.endswith("_stderr"):
            fields.append(_fmt(row.stderrs.get(col[:-7], "")))
        else:
            fields.append(_fmt(getattr(row, col)))
    return ",".join(fields)


def write_results(rows, output_dir, stem="sweep", fmt=("csv", "json_summary"),
                  config_echo=None):
    """Write the CSV table and/or JSON summary; returns the file paths."""
    if not rows:
        raise IoError("no rows to write")
    os.makedirs(output_dir, exist_ok=True)
    paths = {}
    if "csv" in fmt:
        path = os.path.join(output_dir, f"{stem}.csv")
        try:
            with open(path, "w") as fh:
                fh.write(",".join(csv_columns()) + "\n")
                for row in rows:
                    fh.write(row_to_csv(row) + "\n")
                    fh.flush()
        except OSError as exc:
            raise IoError(str(exc))
        paths["csv"] = path
    if "json_summary" in fmt:
        path = os.path.join(output_dir, f"{stem}.json")
        summary = {
            "config": config_echo or {},
            "master_seed": rows[0].master_seed,
            "columns": csv_columns(),
            "crossings": crossing_estimates(rows),
            "rows": [
                {
                    "axis": r.axis,
                    "value": r.value,
                    "L": r.L,
                    "means": r.means,
                    "stderrs": r.stderrs,
                    "error": r.error,
                }
                for r in rows
            ],
        }
        try:
            with open(path, "w") as fh:
                json.dump(summary, fh, indent=1, sort_keys=True)
        except OSError as exc:
            raise IoError(str(exc))
        paths["json"] = path
    return paths


def parse_results_csv(path):
    """Read back a results CSV into (header, list of dict rows)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            rows.append(dict(zip(header, parts)))
    return header, rows


# -- crossing estimation -----------------------------------------------------------


def crossing_of_two_curves(x, y_a, y_b):
    """Linear-interpolated crossing of two curves on a shared grid (or None)."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(y_a, dtype=float) - np.asarray(y_b, dtype=float)
    for k in range(len(x) - 1):
        if d[k] == 0.0:
            return float(x[k])
        if d[k] * d[k + 1] < 0.0:
            frac = d[k] / (d[k] - d[k + 1])
            return float(x[k] + frac * (x[k + 1] - x[k]))
    if d[-1] == 0.0:
        return float(x[-1])
    return None


def crossing_estimates(rows):
    """Pairwise L-crossing estimates per observable, when two L are present."""
    by_l = {}
    for row in rows:
        if row.error:
            continue
        by_l.setdefault(row.L, []).append(row)
    if len(by_l) < 2:
        return {}
    out = {}
    sizes = sorted(by_l)
    for name in SCALAR_OBSERVABLES:
        pair_estimates = {}
        for a, b in zip(sizes, sizes[1:]):
            rows_a = sorted(by_l[a], key=lambda r: r.value)
            rows_b = sorted(by_l[b], key=lambda r: r.value)
            xs_a = [r.value for r in rows_a]
            xs_b = [r.value for r in rows_b]
            shared = [x for x in xs_a if x in xs_b]
            if len(shared) < 2:
                continue
            y_a = [r.means.get(name) for r in rows_a if r.value in shared]
            y_b = [r.means.get(name) for r in rows_b if r.value in shared]
            if any(v is None for v in y_a + y_b):
                continue
            crossing = crossing_of_two_curves(shared, y_a, y_b)
            if crossing is not None:
                pair_estimates[f"{a}x{b}"] = crossing
        if pair_estimates:
            out[name] = pair_estimates
    return out


def collapse_fit(curves, xc_grid, nu_grid):
    """Coarse-grid scaling-collapse fit: minimize the master-curve residual.

    ``curves`` maps L -> (x array, y array).  Diagnostic quality only: the
    residual is the squared deviation of every point from the interpolated
    master curve built from all other sizes.
    """
    best = None
    sizes = sorted(curves)
    for xc in xc_grid:
        for nu in nu_grid:
            scaled = {
                L: ((np.asarray(xs) - xc) * L ** (1.0 / nu), np.asarray(ys))
                for L, (xs, ys) in curves.items()
            }
            residual = 0.0
            for L in sizes:
                u_l, y_l = scaled[L]
                u_rest = np.concatenate([scaled[m][0] for m in sizes if m != L])
                y_rest = np.concatenate([scaled[m][1] for m in sizes if m != L])
                order = np.argsort(u_rest)
                u_rest, y_rest = u_rest[order], y_rest[order]
                inside = (u_l >= u_rest[0]) & (u_l <= u_rest[-1])
                if not np.any(inside):
                    continue
                interp = np.interp(u_l[inside], u_rest, y_rest)
                residual += float(np.sum((y_l[inside] - interp) ** 2))
            if best is None or residual < best[2]:
                best = (float(xc), float(nu), residual)
    return best
