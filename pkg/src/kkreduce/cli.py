"""Command-line entry point: ``kkreduce <command> --config FILE [options]``.

Commands
--------
``check``             run every identity suite on the instance; writes ``check.csv``
``simulate-full``     bundle-process estimate; writes ``simulate_full.csv`` (+ ``_curve``)
``simulate-reduced``  factorized estimate; writes ``simulate_reduced.csv`` (+ ``_curve``)
``compare``           both estimators on shared seeds; writes ``compare.csv`` (+ ``_curve``)
``spectrum``          eigenvalues of the filter drift matrix per irrep; writes ``spectrum.csv``

Exit codes: 0 success, 1 a check or comparison failed, 2 structural error
(missing/invalid file, bad configuration, run failure).

CSV files
---------
Every file starts with two comment lines::

    # config_hash=<16 hex>, seed=<int>, command=<name>
    # params={...JSON of the effective configuration...}

followed by a header row. Schemas:

``check.csv``:        ``instance, check, residual, threshold, passed, detail``
``simulate_*.csv``,
``compare.csv``:      ``instance, estimator, t_b, value, value_imag, std_error, n_effective, aborted,
                      z_against_partner, flag`` (``flag`` is ``exact`` when both estimators agree
                      to 1e-12, ``z_against_partner`` is empty for single-estimator runs)
``*_curve.csv``:      ``instance, estimator, t, estimate, estimate_imag, se``
``spectrum.csv``:     ``instance, irrep, index, eigenvalue, eigenvalue_imag, diagonal, diagonal_imag``

Nothing time-dependent is written, so reruns with the same configuration and
seed produce byte-identical files. The only environment variable consulted is
``KKREDUCE_OUTPUT_DIR`` (output-directory override, below ``--out``).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import checks
from .config import (OUTPUT_DIR_ENV, RunConfig, _read_toml, config_hash, config_path, instance_path, load_algebra,
                     load_instance, load_run_config)
from .errors import KKError, RunFailure, StructuralError
from .estimator import SemigroupEstimate, compare, estimate_full, estimate_reduced
from .filtering import ReducedGenerator

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_FAIL, EXIT_STRUCTURAL = 0, 1, 2

ESTIMATE_COLUMNS = ("instance", "estimator", "t_b", "value", "value_imag", "std_error", "n_effective",
                    "aborted", "z_against_partner", "flag")
CURVE_COLUMNS = ("instance", "estimator", "t", "estimate", "estimate_imag", "se")


def _num(v) -> str:
    return repr(float(v))


def _split(v) -> tuple[str, str]:
    v = complex(v)
    return _num(v.real), _num(v.imag)


class _Context:
    """Resolved configuration of one invocation: instance, optional run config, output dir, hash."""

    def __init__(self, args: argparse.Namespace, need_run: bool):
        try:
            path = config_path(args.config)
        except StructuralError:
            path = instance_path(args.config)
        raw = _read_toml(path)
        self.run: RunConfig | None = None
        if "run" in raw:
            self.run = load_run_config(path, seed=args.seed, n_paths=args.paths, dt=args.dt, out=args.out,
                                       unsimplified_drift=args.flag_unsimplified_drift,
                                       alt_ordering=args.flag_alt_ordering)
            self.instance = self.run.instance
            self.out_dir = self.run.out_dir
            self.hash = self.run.hash
            self.seed = self.run.params.seed
            self.raw = self.run.raw
        elif need_run:
            raise KKError(f"{path}: this command needs a run configuration (a [run] table)")
        else:
            self.instance = load_instance(path)
            self.out_dir = Path(args.out or os.environ.get(OUTPUT_DIR_ENV) or "results")
            self.raw = {"instance": raw, "seed": args.seed or 0}
            self.hash = config_hash(self.raw)
            self.seed = args.seed or 0

    def open_csv(self, name: str, command: str):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        fh = open(self.out_dir / name, "w", newline="")
        fh.write(f"# config_hash={self.hash}, seed={self.seed}, command={command}\n")
        fh.write("# params=" + json.dumps(self.raw, sort_keys=True, default=str) + "\n")
        return fh, csv.writer(fh, lineterminator="\n")


def _estimate_rows(est: SemigroupEstimate, t_b: float, z: float | None = None, flag: str = "") -> list:
    re, im = _split(est.value)
    return [est.metadata.get("instance", ""), est.estimator, _num(t_b), re, im, _num(est.std_error),
            est.n_effective, est.aborted_paths, "" if z is None else _num(z), flag]


def _curve_rows(est: SemigroupEstimate) -> list[list]:
    rows = []
    for t, v, se in est.curve:
        re, im = _split(v)
        rows.append([est.metadata.get("instance", ""), est.estimator, _num(t), re, im, _num(se)])
    return rows


def _write_estimates(ctx: _Context, stem: str, command: str, rows: list, curves: list) -> None:
    fh, w = ctx.open_csv(f"{stem}.csv", command)
    with fh:
        w.writerow(ESTIMATE_COLUMNS)
        w.writerows(rows)
    if curves:
        fh, w = ctx.open_csv(f"{stem}_curve.csv", command)
        with fh:
            w.writerow(CURVE_COLUMNS)
            w.writerows(curves)


def _run_estimator(run: RunConfig, which: str) -> SemigroupEstimate:
    model = run.instance.model
    common = dict(record_times=run.record_times or None)
    if which == "full":
        return estimate_full(model, run.params, run.coefficients, run.x0, run.y0, run.potential,
                             drift=run.drift, **common)
    return estimate_reduced(model, run.params, run.coefficients, run.x0, run.y0, run.potential,
                            ordering=run.ordering, **common)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _instance_reference(args) -> Path:
    try:
        path = config_path(args.config)
    except StructuralError:
        return instance_path(args.config)
    raw = _read_toml(path)
    if "run" in raw and "instance" in raw["run"]:
        return instance_path(raw["run"]["instance"], path.parent)
    return path


def _write_checks(out_dir, name: str, results, hash_: str, seed: int, raw: dict) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "check.csv", "w", newline="") as fh:
        fh.write(f"# config_hash={hash_}, seed={seed}, command=check\n")
        fh.write("# params=" + json.dumps(raw, sort_keys=True, default=str) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("instance", "check", "residual", "threshold", "passed", "detail"))
        for c in results:
            w.writerow((name, c.name, _num(c.residual), _num(c.threshold), c.passed, c.detail))


def _report_checks(name: str, results) -> int:
    failed = [c for c in results if not c.passed]
    for c in failed:
        print(f"FAILED {c}", file=sys.stderr)
    print(f"{name}: {len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_check(args) -> int:
    # validate the algebra first: a broken algebra must be reported as a failed
    # check, not as a failure to assemble the representations built on it
    inst_path = _instance_reference(args)
    algebra = checks.algebra_suite(load_algebra(inst_path))
    if not all(c.passed for c in algebra):
        raw = {"instance": _read_toml(inst_path), "seed": args.seed or 0}
        out = args.out or os.environ.get(OUTPUT_DIR_ENV) or "results"
        _write_checks(out, inst_path.stem, algebra, config_hash(raw), args.seed or 0, raw)
        return _report_checks(inst_path.stem, algebra)
    ctx = _Context(args, need_run=False)
    geo = ctx.run.geometry_points if ctx.run else 100
    gen = ctx.run.generator_points if ctx.run else 20
    results = checks.run_all(ctx.instance, geometry_points=geo, generator_points=gen, seed=ctx.seed)
    _write_checks(ctx.out_dir, ctx.instance.name, results, ctx.hash, ctx.seed, ctx.raw)
    return _report_checks(ctx.instance.name, results)


def cmd_simulate(args, which: str) -> int:
    ctx = _Context(args, need_run=True)
    est = _run_estimator(ctx.run, which)
    stem = f"simulate_{which}"
    _write_estimates(ctx, stem, f"simulate-{which}", [_estimate_rows(est, ctx.run.params.t_b)], _curve_rows(est))
    print(f"{ctx.instance.name} {which}: {est.value} +- {est.std_error} "
          f"(n={est.n_effective}, aborted={est.aborted_paths})")
    return EXIT_OK


def cmd_compare(args) -> int:
    ctx = _Context(args, need_run=True)
    run = ctx.run
    full = _run_estimator(run, "full")
    red = _run_estimator(run, "reduced")
    rep = compare(full, red, run.z_threshold)
    flag = "exact" if rep.exact else ""
    rows = [_estimate_rows(full, run.params.t_b, rep.z, flag), _estimate_rows(red, run.params.t_b, rep.z, flag)]
    _write_estimates(ctx, "compare", "compare", rows, _curve_rows(full) + _curve_rows(red))
    print(f"{ctx.instance.name}: full {full.value} +- {full.std_error}, reduced {red.value} +- {red.std_error}, "
          f"z = {rep.z:.3f} ({'pass' if rep.passed else 'FAIL'}{', exact' if rep.exact else ''})")
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_spectrum(args) -> int:
    ctx = _Context(args, need_run=False)
    model = ctx.instance.model
    if ctx.run is not None:
        params, x0 = ctx.run.params, ctx.run.x0
    else:
        from .sde import SimulationParams

        params, x0 = SimulationParams(), np.zeros(model.base_dim)
    fh, w = ctx.open_csv("spectrum.csv", "spectrum")
    with fh:
        w.writerow(("instance", "irrep", "index", "eigenvalue", "eigenvalue_imag", "diagonal", "diagonal_imag"))
        for label, irrep in ctx.instance.irreps.items():
            lam = ReducedGenerator(model, irrep, params).drift_matrix(x0[None])[0]
            ev = np.linalg.eigvals(lam)
            ev = ev[np.lexsort((ev.imag, ev.real))]
            for i, (e, d) in enumerate(zip(ev, np.diag(lam))):
                w.writerow((ctx.instance.name, label, i, *_split(e), *_split(d)))
            print(f"{ctx.instance.name} {label}: " + " ".join(f"{e.real:.6g}" for e in ev))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kkreduce", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("check", "run the identity suites"),
                        ("simulate-full", "estimate by bundle simulation"),
                        ("simulate-reduced", "estimate by the factorized filter"),
                        ("compare", "run both estimators on shared seeds"),
                        ("spectrum", "eigenvalues of the filter drift matrix")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="run configuration or instance TOML file (or the name of a shipped one)")
        p.add_argument("--out", help=f"output directory (overrides the config and ${OUTPUT_DIR_ENV})")
        p.add_argument("--seed", type=int, help="override the simulation seed")
        p.add_argument("--paths", type=int, help="override n_paths")
        p.add_argument("--dt", type=float, help="override the time step")
        p.add_argument("--flag-unsimplified-drift", action="store_true",
                       help="full simulation with the literal finite-difference drift")
        p.add_argument("--flag-alt-ordering", action="store_true",
                       help="filter with generators placed on the right (negative control)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    commands = {
        "check": cmd_check,
        "simulate-full": lambda a: cmd_simulate(a, "full"),
        "simulate-reduced": lambda a: cmd_simulate(a, "reduced"),
        "compare": cmd_compare,
        "spectrum": cmd_spectrum,
    }
    try:
        return commands[args.command](args)
    except (KKError, RunFailure, OSError) as exc:
        print(f"kkreduce: error: {exc}", file=sys.stderr)
        return EXIT_STRUCTURAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
