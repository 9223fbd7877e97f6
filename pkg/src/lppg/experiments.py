"""Seeded multi-trial studies and their on-disk outputs.

Every study is a pure function of its :class:`ExperimentConfig` (including
the base seed).  Trial ``t`` of grid cell ``c`` draws its signal, mask and
noise from its own substream, so adding trials or cells never changes
existing results.
"""
import csv
import json
import logging
import math
import os
import shutil
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .hankel_ops import HankelShape
from .signals import add_noise, generate_signal, nmse, observe, sample_uniform, trial_rng
from .solver import VARIANTS, SolverConfig, solve

__all__ = [
    "KINDS",
    "PRESETS",
    "ConfigError",
    "ExperimentConfig",
    "ResultRow",
    "RESULT_FIELDS",
    "make_config",
    "run_experiment",
    "run_phase_transition",
    "run_convergence",
    "run_noise_table",
    "run_size_sweep",
    "transition_curve",
    "emit_outputs",
    "format_value",
]

log = logging.getLogger(__name__)

KINDS = ("phase_transition", "convergence", "noise_table", "size_sweep", "single")
TERMINATIONS = ("tolerance", "max_iter", "rel_change")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of one study.

    ``dims`` is the signal grid; the size sweep replaces it with each entry of
    ``sizes`` (1-D).  ``beta`` fixes the Hankel weight absolutely; otherwise
    each entry of ``beta_scales`` multiplies the default weight.
    """

    kind: str
    dims: tuple = (63,)
    sizes: tuple = ()
    ranks: tuple = (3,)
    sps: tuple = (0.5,)
    etas: tuple = (0.0,)
    damped: bool = False
    beta_scales: tuple = (1.0,)
    beta: float = None
    trials: int = 10
    seed: int = 0
    variants: tuple = ("lppg",)
    max_iter: int = 1000
    eps: float = 1e-6
    stop: str = "subgradient"
    rel_tol: float = 1e-3
    success_tol: float = 1e-3
    workers: int = 1
    out: str = "results"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        for name in ("dims", "sizes", "ranks", "sps", "etas", "beta_scales", "variants"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        grids = ["ranks", "sps", "etas", "beta_scales", "variants"]
        grids.append("sizes" if self.kind == "size_sweep" else "dims")
        for name in grids:
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"{name} must not be empty")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ConfigError(f"unknown variants {bad}; implemented: {list(VARIANTS)}")
        if any(not 0 < sp <= 1 for sp in self.sps):
            raise ConfigError("sampling ratios must lie in (0, 1]")
        if any(e < 0 for e in self.etas):
            raise ConfigError("noise levels must be non-negative")
        if any(b <= 0 for b in self.beta_scales) or (self.beta is not None and self.beta <= 0):
            raise ConfigError("beta values must be positive")
        if any(r < 1 for r in self.ranks):
            raise ConfigError("ranks must be >= 1")
        if self.max_iter < 0:
            raise ConfigError("max_iter must be non-negative")
        if not 1 <= len(self.dims) <= 3 or any(n < 1 for n in self.dims):
            raise ConfigError(f"dims must be 1 to 3 positive sizes, got {self.dims}")
        if self.stop not in ("subgradient", "rel_change"):
            raise ConfigError(f"unknown stopping rule {self.stop!r}")

    def solver_config(self, r, beta_scale, variant, seed):
        return SolverConfig(
            r=r,
            beta=self.beta,
            beta_scale=beta_scale,
            eps=self.eps,
            max_iter=self.max_iter,
            variant=variant,
            stop=self.stop,
            rel_tol=self.rel_tol,
            seed=seed,
        )


_ALL = ("lppg", "mpg", "pg")

PRESETS = {
    "phase_transition": dict(
        dims=(63,),
        ranks=tuple(range(1, 21)),
        sps=tuple(round(0.1 * k, 1) for k in range(1, 11)),
        trials=50,
        variants=("lppg",),
    ),
    "convergence": dict(
        dims=(31, 31),
        ranks=(15,),
        sps=(0.3,),
        beta=1e-6,
        max_iter=100,
        eps=0.0,
        trials=50,
        variants=_ALL,
    ),
    "noise_table": dict(
        dims=(15, 15, 15),
        ranks=(10,),
        sps=(1.0,),
        etas=(1.0,),
        beta_scales=(1.0, 10.0, 100.0),
        stop="rel_change",
        trials=50,
        variants=_ALL,
    ),
    "size_sweep": dict(
        sizes=(17, 33, 65, 129),
        dims=(17,),
        ranks=(2,),
        sps=(1.0,),
        etas=(1.0,),
        beta_scales=(100.0,),
        trials=50,
        variants=_ALL,
    ),
    "single": dict(trials=1),
}

# desk-scale overrides: fewer trials, and a coarser grid for the phase diagram
QUICK = {
    "phase_transition": dict(trials=10, sps=(0.3, 0.5, 0.7), ranks=tuple(range(1, 13))),
    "convergence": dict(trials=10),
    "noise_table": dict(trials=10),
    "size_sweep": dict(trials=10),
    "single": {},
}


def _coerce(name, value):
    """Convert a config value to the type of the matching field."""
    if name in ("dims", "sizes", "ranks"):
        vals = value if isinstance(value, (list, tuple)) else [value]
        return tuple(int(v) for v in vals)
    if name in ("sps", "etas", "beta_scales"):
        vals = value if isinstance(value, (list, tuple)) else [value]
        return tuple(float(v) for v in vals)
    if name == "variants":
        vals = value if isinstance(value, (list, tuple)) else [value]
        return tuple(str(v) for v in vals)
    if name in ("trials", "seed", "max_iter", "workers"):
        if isinstance(value, bool) or float(value) != int(float(value)):
            raise ConfigError(f"{name} must be an integer, got {value!r}")
        return int(float(value))
    if name in ("eps", "rel_tol", "success_tol"):
        return float(value)
    if name == "beta":
        return None if value is None else float(value)
    if name == "damped":
        if not isinstance(value, bool):
            raise ConfigError(f"damped must be true or false, got {value!r}")
        return value
    return str(value)


def _flatten(mapping):
    """Nested config sections collapse onto the flat field names."""
    flat = {}
    for key, value in mapping.items():
        key = str(key).replace("-", "_")
        if isinstance(value, dict):
            flat.update(_flatten(value))
        else:
            flat[key] = value
    return flat


def make_config(kind, file_values=None, quick=False, **overrides):
    """Merge preset, file values and command-line overrides (in that order).

    Raises
    ------
    ConfigError
        On unknown keys, bad types or violated invariants.
    """
    kind = kind.replace("-", "_")
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    values = dict(PRESETS[kind])
    if quick:
        values.update(QUICK[kind])
    known = {f.name for f in fields(ExperimentConfig)} - {"kind"}
    file_values = _flatten(file_values or {})
    file_values.pop("experiment", None)
    file_values.pop("kind", None)
    unknown = set(file_values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    values.update(file_values)
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        values = {k: _coerce(k, v) for k, v in values.items()}
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(kind=kind, **values)


@dataclass
class ResultRow:
    experiment: str
    variant: str
    dims: str
    r: int
    Sp: float
    beta_scale: float
    eta: float
    damped: bool
    seed: int
    trial: int
    nmse: float
    iterations: int
    termination: str
    time: float = field(default=0.0, compare=False)


# wall time is kept out of results.csv so that file is reproducible byte for byte
RESULT_FIELDS = [f.name for f in fields(ResultRow) if f.name != "time"]


def format_value(v):
    """Fixed textual form of a CSV cell."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        if math.isnan(v):
            return "nan"
        return f"{float(v):.9e}"
    return str(v)


def _dims_label(dims):
    return "x".join(str(n) for n in dims)


@dataclass(frozen=True)
class _Task:
    cfg: ExperimentConfig
    dims: tuple
    r: int
    Sp: float
    eta: float
    trial: int
    keep_curve: bool = False


def _cell_keys(task):
    return (task.r, round(task.Sp * 1e6), round(task.eta * 1e6), int(task.cfg.damped), *task.dims)


def make_instance(cfg, dims, r, Sp, eta, trial):
    """Signal, observation and solver seed of one trial."""
    task = _Task(cfg, tuple(dims), r, Sp, eta, trial)
    rng = trial_rng(cfg.seed, trial, *_cell_keys(task))
    x, _ = generate_signal(dims, r, damped=cfg.damped, rng=rng)
    data = observe(x, sample_uniform(x.size, Sp, rng))
    if eta > 0:
        data = add_noise(data, eta, rng)
    solver_seed = int(rng.integers(2**32))
    return x, data, solver_seed


def _run_task(task):
    cfg = task.cfg
    x, data, solver_seed = make_instance(cfg, task.dims, task.r, task.Sp, task.eta, task.trial)
    shape = HankelShape.from_dims(task.dims)
    rows, curves = [], {}
    for variant in cfg.variants:
        for bs in cfg.beta_scales:
            scfg = cfg.solver_config(task.r, bs, variant, solver_seed)
            t0 = time.perf_counter()
            est, trace, _ = solve(data, shape, scfg, truth=x)
            elapsed = time.perf_counter() - t0
            rows.append(
                ResultRow(
                    experiment=cfg.kind,
                    variant=variant,
                    dims=_dims_label(task.dims),
                    r=task.r,
                    Sp=task.Sp,
                    beta_scale=bs,
                    eta=task.eta,
                    damped=cfg.damped,
                    seed=cfg.seed,
                    trial=task.trial,
                    nmse=nmse(est, x),
                    iterations=trace.n_iter,
                    termination=trace.termination,
                    time=elapsed,
                )
            )
            if task.keep_curve:
                curves[(variant, bs)] = np.asarray(trace.nmse)
    return rows, curves


def _tasks(cfg, keep_curve=False):
    dims_list = [(n,) for n in cfg.sizes] if cfg.kind == "size_sweep" else [cfg.dims]
    for dims in dims_list:
        for Sp in cfg.sps:
            for r in cfg.ranks:
                for eta in cfg.etas:
                    for t in range(cfg.trials):
                        yield _Task(cfg, tuple(dims), r, Sp, eta, t, keep_curve)


def _run_all(cfg, keep_curve=False, sink=None):
    """Run every trial; results come back in task order regardless of workers.

    ``sink`` receives the rows of each finished task, so an interrupted study
    keeps what it has.
    """
    tasks = list(_tasks(cfg, keep_curve))
    rows, curves = [], []
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = pool.map(_run_task, tasks)
            for task_rows, task_curves in results:
                rows.extend(task_rows)
                curves.append(task_curves)
                if sink is not None:
                    sink.extend(task_rows)
    else:
        for i, task in enumerate(tasks):
            task_rows, task_curves = _run_task(task)
            rows.extend(task_rows)
            curves.append(task_curves)
            if sink is not None:
                sink.extend(task_rows)
            log.info("task %d/%d done", i + 1, len(tasks))
    return rows, curves


def _group(rows, keys):
    groups = {}
    for row in rows:
        groups.setdefault(tuple(getattr(row, k) for k in keys), []).append(row)
    return groups


GROUP_KEYS = ("variant", "dims", "r", "Sp", "beta_scale", "eta", "damped")


def summarize(rows, success_tol=1e-3):
    """Aggregate statistics per parameter combination."""
    out = []
    for key, grp in _group(rows, GROUP_KEYS).items():
        err = np.array([g.nmse for g in grp])
        its = np.array([g.iterations for g in grp])
        term = {t: sum(g.termination == t for g in grp) for t in TERMINATIONS}
        out.append(
            {
                **dict(zip(GROUP_KEYS, key)),
                "trials": len(grp),
                "nmse_mean": float(err.mean()),
                "nmse_std": float(err.std()),
                "nmse_median": float(np.median(err)),
                "success_rate": float(np.mean(err < success_tol)),
                "iterations_mean": float(its.mean()),
                "time_mean": float(np.mean([g.time for g in grp])),
                "terminations": term,
            }
        )
    return out


def transition_curve(rows, success_tol=1e-3, level=0.5):
    """For each sampling ratio, the largest rank recovered in at least
    ``level`` of the trials (0 if none)."""
    curve = {}
    for (variant, Sp), grp in _group(rows, ("variant", "Sp")).items():
        best = 0
        for r, cell in _group(grp, ("r",)).items():
            if np.mean([c.nmse < success_tol for c in cell]) >= level:
                best = max(best, r[0])
        curve.setdefault(variant, {})[Sp] = best
    return {v: sorted(c.items()) for v, c in curve.items()}


def run_phase_transition(cfg, sink=None):
    rows, _ = _run_all(cfg, sink=sink)
    curve = transition_curve(rows, cfg.success_tol)
    curves = {f"phase_transition_{v}": (("Sp", "r50"), pts) for v, pts in curve.items()}
    return rows, curves, {"transition_curve": {v: [[sp, r] for sp, r in pts] for v, pts in curve.items()}}


def run_convergence(cfg, sink=None):
    rows, per_task = _run_all(cfg, keep_curve=True, sink=sink)
    curves, checkpoints = {}, {}
    for variant in cfg.variants:
        for bs in cfg.beta_scales:
            runs = [c[(variant, bs)] for c in per_task]
            length = min(len(c) for c in runs)
            mean = np.mean([c[:length] for c in runs], axis=0)
            label = f"convergence_{variant}" + ("" if len(cfg.beta_scales) == 1 else f"_b{bs:g}")
            curves[label] = (("iteration", "nmse_mean"), list(enumerate(mean)))
            checkpoints[label] = {str(k): float(mean[k]) for k in (10, 20, 40, 60, 70, 100) if k < length}
    return rows, curves, {"nmse_at_iteration": checkpoints}


def _by_param(rows, param):
    """Mean NMSE against ``param`` per variant, as plot-ready series."""
    curves = {}
    for (variant,), grp in _group(rows, ("variant",)).items():
        pts = [(key[0], float(np.mean([g.nmse for g in cell]))) for key, cell in _group(grp, (param,)).items()]
        curves[variant] = sorted(pts)
    return curves


def run_noise_table(cfg, sink=None):
    rows, _ = _run_all(cfg, sink=sink)
    curves = {f"noise_table_{v}": (("beta_scale", "nmse_mean"), pts) for v, pts in _by_param(rows, "beta_scale").items()}
    return rows, curves, {}


def run_size_sweep(cfg, sink=None):
    rows, _ = _run_all(cfg, sink=sink)
    curves = {
        f"size_sweep_{v}": (("n", "nmse_mean"), sorted((int(n), y) for n, y in pts))
        for v, pts in _by_param(rows, "dims").items()
    }
    return rows, curves, {}


RUNNERS = {
    "phase_transition": run_phase_transition,
    "convergence": run_convergence,
    "noise_table": run_noise_table,
    "size_sweep": run_size_sweep,
}


def run_experiment(cfg, sink=None):
    """Run a study.

    Returns
    -------
    rows : list of ResultRow
    curves : dict
        ``name -> ((x_label, y_label), [(x, y), ...])``.
    extra : dict
        Study-specific aggregates for the summary.
    """
    if cfg.kind not in RUNNERS:
        raise ConfigError(f"experiment kind {cfg.kind!r} has no study runner")
    return RUNNERS[cfg.kind](cfg, sink=sink)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])


def emit_outputs(rows, curves, outdir, cfg=None, extra=None):
    """Write ``results.csv``, ``timings.csv``, ``summary.json`` and
    ``curves/*.csv`` into ``outdir``.

    Files are staged in a temporary directory next to ``outdir`` and moved
    into place only when all of them are written, so a failure leaves no
    partial files behind.
    """
    outdir = os.path.abspath(outdir)
    parent = os.path.dirname(outdir)
    os.makedirs(parent, exist_ok=True)
    stage = tempfile.mkdtemp(prefix=".stage-", dir=parent)
    try:
        _write_csv(
            os.path.join(stage, "results.csv"),
            RESULT_FIELDS,
            ([getattr(r, k) for k in RESULT_FIELDS] for r in rows),
        )
        _write_csv(
            os.path.join(stage, "timings.csv"),
            ["variant", "dims", "r", "Sp", "beta_scale", "eta", "trial", "time"],
            ([r.variant, r.dims, r.r, r.Sp, r.beta_scale, r.eta, r.trial, r.time] for r in rows),
        )
        os.makedirs(os.path.join(stage, "curves"))
        for name, (labels, pts) in sorted(curves.items()):
            _write_csv(os.path.join(stage, "curves", f"{name}.csv"), labels, pts)
        summary = {
            "config": _jsonable(asdict(cfg)) if cfg is not None else None,
            "groups": summarize(rows, cfg.success_tol if cfg is not None else 1e-3),
            "terminations": {t: sum(r.termination == t for r in rows) for t in TERMINATIONS},
            **_jsonable(extra or {}),
        }
        with open(os.path.join(stage, "summary.json"), "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2, sort_keys=False)
            f.write("\n")
        os.makedirs(outdir, exist_ok=True)
        for name in ("results.csv", "timings.csv", "summary.json"):
            os.replace(os.path.join(stage, name), os.path.join(outdir, name))
        if os.path.isdir(os.path.join(outdir, "curves")):
            shutil.rmtree(os.path.join(outdir, "curves"))
        os.replace(os.path.join(stage, "curves"), os.path.join(outdir, "curves"))
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return outdir


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj
