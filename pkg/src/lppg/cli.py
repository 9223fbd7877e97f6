"""Command-line entry point: ``lppg <subcommand> [options]``.

Exit codes: 0 success, 1 configuration error, 2 solver failure, 3 I/O error.
"""
import argparse
import csv
import json
import logging
import sys

import numpy as np
import yaml

from .experiments import (
    ConfigError,
    ResultRow,
    emit_outputs,
    make_config,
    run_experiment,
)
from .hankel_ops import HankelShape, ShapeError
from .linalg import CGError, LanczosError
from .signals import ObservedData, SampleMask, nmse
from .solver import SolverError, solve

log = logging.getLogger("lppg")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3

SUBCOMMANDS = {
    "phase-transition": "phase_transition",
    "convergence": "convergence",
    "noise-table": "noise_table",
    "size-sweep": "size_sweep",
    "solve": "single",
}


def load_config_file(path):
    """Read a YAML (or JSON, which is valid YAML) config file."""
    if path is None:
        return {}
    with open(path, encoding="utf-8") as f:
        try:
            values = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if values is None:
        return {}
    if not isinstance(values, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return values


def read_signal_file(path):
    """Observed samples from CSV or JSON.

    JSON: ``{"dims": [...], "entries": [[index, re, im], ...], "truth":
    [[re, im], ...]}`` with ``truth`` optional.  CSV: a first line
    ``# dims: n1 [n2 [n3]]`` followed by an ``index,re,im`` header and rows.
    Indices are column-major linear indices (first dimension fastest).

    Returns
    -------
    dims : tuple
    data : ObservedData
    truth : ndarray or None
    """
    truth = None
    if path.endswith(".json"):
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
        try:
            dims = tuple(int(n) for n in doc["dims"])
            entries = np.asarray(doc["entries"], dtype=float).reshape(-1, 3)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: malformed signal file ({exc})") from exc
        if doc.get("truth") is not None:
            t = np.asarray(doc["truth"], dtype=float).reshape(-1, 2)
            truth = t[:, 0] + 1j * t[:, 1]
    else:
        with open(path, encoding="utf-8", newline="") as f:
            first = f.readline().strip()
            if not first.startswith("#") or "dims" not in first:
                raise ConfigError(f"{path}: first line must be '# dims: n1 [n2 [n3]]'")
            dims = tuple(int(n) for n in first.split(":", 1)[1].replace(",", " ").split())
            reader = csv.DictReader(f)
            try:
                entries = np.array([[float(r["index"]), float(r["re"]), float(r["im"])] for r in reader]).reshape(-1, 3)
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"{path}: malformed row ({exc})") from exc
    N = int(np.prod(dims))
    idx = entries[:, 0].astype(np.int64)
    if np.any(idx != entries[:, 0]):
        raise ConfigError(f"{path}: indices must be integers")
    order = np.argsort(idx)
    try:
        mask = SampleMask(idx[order], N)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    s = np.zeros(N, complex)
    s[idx] = entries[:, 1] + 1j * entries[:, 2]
    if truth is not None and truth.size != N:
        raise ConfigError(f"{path}: truth has {truth.size} entries, expected {N}")
    return dims, ObservedData(s, mask), truth


def write_signal(path, x):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["index", "re", "im"])
        for i, v in enumerate(x):
            w.writerow([i, f"{v.real:.9e}", f"{v.imag:.9e}"])


def build_parser():
    parser = argparse.ArgumentParser(prog="lppg", description="Spectrally sparse signal recovery experiments.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML or JSON config file")
        p.add_argument("--seed", type=int, help="base seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--quick", action="store_true", help="desk-scale preset")
        p.add_argument("--variant", choices=["lppg", "mpg", "pg"], help="run a single solver variant")
        p.add_argument("--trials", type=int, help="override the number of trials")
        p.add_argument("--workers", type=int, help="worker processes")
        if name == "solve":
            p.add_argument("input", help="observed samples (.csv or .json)")
            p.add_argument("--rank", type=int, help="model order")
    return parser


def _run_solve(cfg, path):
    dims, data, truth = read_signal_file(path)
    shape = HankelShape.from_dims(dims)
    scfg = cfg.solver_config(cfg.ranks[0], cfg.beta_scales[0], cfg.variants[0], cfg.seed)
    x, trace, _ = solve(data, shape, scfg, truth=truth)
    row = ResultRow(
        experiment="single",
        variant=scfg.variant,
        dims="x".join(map(str, dims)),
        r=scfg.r,
        Sp=data.mask.Sp,
        beta_scale=cfg.beta_scales[0],
        eta=0.0,
        damped=False,
        seed=cfg.seed,
        trial=0,
        nmse=nmse(x, truth) if truth is not None else float("nan"),
        iterations=trace.n_iter,
        termination=trace.termination,
        time=float(np.nansum(trace.time_total)),
    )
    curve = [(i, f) for i, f in enumerate(trace.F)]
    return [row], {"objective": (("iteration", "F"), curve)}, {}, x


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    kind = SUBCOMMANDS[args.command]
    rows, cfg = [], None
    try:
        overrides = dict(seed=args.seed, out=args.out, trials=args.trials, workers=args.workers)
        if args.variant:
            overrides["variants"] = [args.variant]
        if getattr(args, "rank", None) is not None:
            overrides["ranks"] = [args.rank]
        cfg = make_config(kind, load_config_file(args.config), quick=args.quick, **overrides)
        x = None
        if kind == "single":
            rows, curves, extra, x = _run_solve(cfg, args.input)
        else:
            rows, curves, extra = run_experiment(cfg, sink=rows)
        emit_outputs(rows, curves, cfg.out, cfg, extra)
        if x is not None:
            write_signal(f"{cfg.out}/signal.csv", x)
    except (ConfigError, ShapeError, ValueError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (SolverError, LanczosError, CGError) as exc:
        log.error("solver failure: %s", exc)
        _salvage(rows, cfg)
        return EXIT_SOLVER
    except KeyboardInterrupt:
        log.error("interrupted; writing partial results")
        _salvage(rows, cfg)
        return 130
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    print(f"wrote {len(rows)} rows to {cfg.out}")
    return EXIT_OK


def _salvage(rows, cfg):
    if not rows or cfg is None:
        return
    try:
        emit_outputs(rows, {}, cfg.out, cfg, {"partial": True})
    except OSError as exc:
        log.error("could not write partial results: %s", exc)


if __name__ == "__main__":
    sys.exit(main())
