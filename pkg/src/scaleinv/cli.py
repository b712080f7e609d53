"""Command-line interface.

Exit status: 0 on success, 1 when an analysis fails (or a ``--require-pass``
check is negative), 2 on usage errors and unreadable inputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .integrate import IntegrationError, PreAdaptationError, find_steady_state, integrate, step_response
from .kinetics import FIXTURE_NAMES, REFERENCE_CIRCUITS, CircuitError, load_circuit, load_fixture
from .metrics import MetricError, adaptation_metrics, asi_metric, metrics_row, write_metrics_csv
from .output import emit_plot_data, read_manifest, stdout_or, write_json, write_manifest

log = logging.getLogger("scaleinv")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def load_model(ref: str, constitutive_fraction: float | None = None):
    """A fixture name or a circuit JSON file."""
    if ref in FIXTURE_NAMES:
        return load_fixture(ref, constitutive_fraction)
    path = Path(ref)
    if not path.is_file():
        raise UsageError(f"no fixture or file named {ref!r}")
    try:
        return load_circuit(path, constitutive_fraction)
    except (OSError, ValueError, KeyError, CircuitError) as exc:
        raise UsageError(f"cannot read circuit file {ref}: {exc}") from exc


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _step(text: str) -> tuple[float, float]:
    try:
        a, b = text.split(":")
        return float(a), float(b)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected FROM:TO, got {text!r}") from exc


def _config(args) -> RunConfig:
    cfg = RunConfig().with_env()
    changes = {k: getattr(args, k) for k in ("seed", "workers", "max_steps", "asi_mode", "p")
               if getattr(args, k, None) is not None}
    if getattr(args, "u_grid", None) is not None:
        changes["u_grid"] = args.u_grid
    if getattr(args, "constitutive_fraction", None) is not None:
        changes["constitutive_fraction"] = args.constitutive_fraction
    return replace(cfg, **changes)


def _fld(model):
    from .kinetics import Circuit, build_rhs

    return build_rhs(model) if isinstance(model, Circuit) else model.field()


def _model(args, cfg):
    frac = cfg.constitutive_fraction if args.constitutive_fraction is not None else None
    return load_model(args.circuit, frac)


# --- subcommands ----------------------------------------------------------------------


def cmd_enumerate(args, cfg):
    from .topology import all_topologies, count_summary, has_io_path

    if args.count:
        print(*count_summary())
        return EXIT_OK
    with stdout_or(args.out) as fh:
        w = csv.writer(fh)
        w.writerow(["id", "code", "edges", "nontrivial"])
        for t in all_topologies():
            io = has_io_path(t)
            if io or args.all:
                w.writerow([t.id, t.code, str(t), int(io)])
    return EXIT_OK


def _parse_topologies(text: str):
    from .topology import Topology, enumerate_nontrivial

    if text == "all":
        return enumerate_nontrivial()
    if text.startswith("random:"):
        from .screen import random_topologies

        n, _, seed = text[len("random:"):].partition(":")
        return random_topologies(int(n), int(seed or 0))
    path = Path(text)
    if path.is_file():
        tokens = path.read_text().replace(",", " ").split()
    else:
        tokens = text.split(",")
    try:
        return [Topology(int(tok)) for tok in tokens if tok.strip()]
    except ValueError as exc:
        raise UsageError(f"bad topology list {text!r}: {exc}") from exc


def cmd_screen(args, cfg):
    from .screen import CheckpointError, SampleSpec, run_screen

    tops = _parse_topologies(args.topologies)
    spec = SampleSpec(args.samples, cfg.seed)
    try:
        report = run_screen(tops, spec, args.out, workers=cfg.workers, checkpoint=args.checkpoint,
                            restart=args.restart, cfg=cfg)
    except CheckpointError as exc:
        raise UsageError(f"{exc}; pass --restart to discard previous output") from exc
    summary = {k: v for k, v in report.items() if k != "per_topology"}
    timing = json.loads(Path(args.out).with_suffix(".timing.json").read_text())
    summary["wall_time"] = sum(timing.values())
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_simulate(args, cfg):
    model = _model(args, cfg)
    fld = _fld(model)
    u1 = args.u0 if args.u1 is None else args.u1
    if args.from_rest:
        x0 = np.full(fld.dim, 0.0 if not fld.bounded else 0.1)
        traj = integrate(fld, x0, u1, args.horizon, cfg.rtol, cfg.atol, samples=args.samples)
    else:
        traj = step_response(fld, args.u0, u1, horizon=args.horizon, samples=args.samples,
                             rtol=cfg.rtol, atol=cfg.atol, tol=cfg.steady_state_tol)
    traj.to_csv(args.out)
    return EXIT_OK


def cmd_adapt(args, cfg):
    model = _model(args, cfg)
    u0, u1 = cfg.high_step if args.u0 is None else (args.u0, args.u1)
    traj = step_response(_fld(model), u0, u1, rtol=cfg.rtol, atol=cfg.atol, tol=cfg.steady_state_tol)
    m = adaptation_metrics(traj, u0, u1, relative_precision=cfg.relative_precision)
    row = metrics_row(args.circuit, 0, u0, u1, m, None, "ok" if traj.equilibrated else "not-equilibrated")
    if args.out:
        write_metrics_csv([row], args.out)
    print(json.dumps({k: row[k] for k in ("precision_ratio", "sensitivity", "adapts", "detects")}))
    return EXIT_FAIL if args.require_pass and not (m.adapts and m.detects) else EXIT_OK


def cmd_asi(args, cfg):
    model = _model(args, cfg)
    fld = _fld(model)
    opts = dict(rtol=cfg.rtol, atol=cfg.atol, tol=cfg.steady_state_tol)
    low = step_response(fld, *cfg.low_step, **opts)
    high = step_response(fld, *cfg.high_step, **opts)
    a = asi_metric(low, high, mode=cfg.asi_mode)
    if args.plot:
        emit_plot_data([(high, low)], args.plot)
    print(json.dumps({"relative_difference": a.relative_difference, "asi": a.asi,
                      "reference_amplitude": a.reference_amplitude}))
    return EXIT_FAIL if args.require_pass and not a.asi else EXIT_OK


def cmd_ulfo(args, cfg):
    from .ulfo import ulfo_verdict

    model = _model(args, cfg)
    rep = ulfo_verdict(model, cfg.u_grid, cfg.u_ref, cfg.p, cfg.thresholds)
    d = rep.to_dict()
    if args.out:
        write_json(d, args.out)
    else:
        print(json.dumps(d, indent=1))
    for number, path in ((1, args.table1), (2, args.table2), (3, args.table3)):
        if path:
            _write_tables([args.circuit], number, path, cfg)
    print(f"verdict: {rep.verdict}", file=sys.stderr)
    return EXIT_FAIL if args.require_pass and not rep.verdict else EXIT_OK


def table_row(name: str, number: int, cfg: RunConfig) -> list[str]:
    from .ulfo import (
        jacobian_uniformity, linearization_table, reduce, sigma_table, table1_row, table2_row, table3_row)

    r = reduce(load_model(name, cfg.constitutive_fraction), cfg.qss_tol)
    if number == 1:
        return table1_row(name, *jacobian_uniformity(r, cfg.u_grid, cfg.u_ref))
    if number == 2:
        return table2_row(name, linearization_table(r, (cfg.low_step, cfg.high_step), max(cfg.u_grid)))
    return table3_row(name, sigma_table(r, cfg.u_grid))


def _write_tables(names, number, path, cfg):
    from .ulfo import write_table

    write_table(number, [table_row(n, number, cfg) for n in names], path)


def cmd_tables(args, cfg):
    from .ulfo import TABLE_HEADERS, reduce, sigma_table

    names = list(REFERENCE_CIRCUITS) if args.circuit == "all" else args.circuit.split(",")
    numbers = [n for n, flag in ((1, args.table1), (2, args.table2), (3, args.table3)) if flag] or [3]
    with stdout_or(args.out) as fh:
        w = csv.writer(fh)
        for number in numbers:
            if number == 3 and len(names) == 1:
                # one circuit: one row per input level
                w.writerow(["u", "xA/u", "xB/u"])
                for u, s in sigma_table(reduce(load_model(names[0], cfg.constitutive_fraction), cfg.qss_tol), cfg.u_grid):
                    w.writerow([f"{u:g}", f"{s[0]:.3f}", f"{s[1]:.3f}"])
                continue
            w.writerow(TABLE_HEADERS[number])
            for name in names:
                w.writerow(table_row(name, number, cfg))
    return EXIT_OK


def cmd_reduce(args, cfg):
    from .ulfo import reduce

    model = _model(args, cfg)
    r = reduce(model, cfg.qss_tol)
    opts = dict(rtol=cfg.rtol, atol=cfg.atol, tol=cfg.steady_state_tol)
    full = step_response(r.full, args.u0, args.u1, **opts)
    pre = find_steady_state(r.full, args.u0, full.states[0])
    red = integrate(r.field, pre.state[:2], args.u1, float(full.times[-1]), cfg.rtol, cfg.atol, t_eval=full.times)
    h_red = r.output(red.states, args.u1)
    h_full = r.output(full.states[:, :2], args.u1)
    with stdout_or(args.out) as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x_A", "x_B", "x_C", "h_full", "x_A_red", "x_B_red", "h_red"])
        for i, t in enumerate(full.times):
            w.writerow([repr(float(v)) for v in (t, *full.states[i], h_full[i], *red.states[i], h_red[i])])
    return EXIT_OK


def cmd_dicty(args, cfg):
    from .casestudy import OUTPUT, overlap, takeda_steps

    steps = args.step or [(1.0, 2.0), (2.0, 4.0)]
    trajs = takeda_steps(steps=steps, v_pre=args.v_pre, samples=args.samples)
    pairs = [(trajs[0], t) for t in trajs[1:]] or [(trajs[0], trajs[0])]
    if args.out:
        emit_plot_data(pairs, args.out, samples=args.samples, ab=(2, 3))
    gaps = [overlap(a, b, args.samples) for a, b in pairs]
    print(json.dumps({"steps": [list(s) for s in steps], "normalized_max_difference": gaps,
                      "output": "RasGTP", "output_index": OUTPUT}))
    return EXIT_OK


COMMANDS = {
    "enumerate": cmd_enumerate, "screen": cmd_screen, "simulate": cmd_simulate, "adapt": cmd_adapt,
    "asi": cmd_asi, "ulfo": cmd_ulfo, "reduce": cmd_reduce, "dicty": cmd_dicty, "tables": cmd_tables,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scaleinv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--replay", metavar="MANIFEST", help="re-run the command recorded in a manifest")
    sub = parser.add_subparsers(dest="command")

    def common(p, circuit=True):
        if circuit:
            p.add_argument("--circuit", required=True, help="fixture name or circuit JSON file")
        p.add_argument("--asi-mode", choices=("pointwise", "amplitude"))
        p.add_argument("--constitutive-fraction", type=float)
        return p

    p = sub.add_parser("enumerate", help="list or count topologies")
    p.add_argument("--count", action="store_true", help='print "total nontrivial excluded"')
    p.add_argument("--all", action="store_true", help="include topologies without an input-output path")
    p.add_argument("--out")

    p = common(sub.add_parser("screen", help="Latin-hypercube adaptation / ASI screen"), circuit=False)
    p.add_argument("--topologies", default="all", help="all | random:N[:SEED] | id file | comma-separated ids")
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--restart", action="store_true", help="discard an existing checkpoint")

    p = common(sub.add_parser("simulate", help="step response to CSV"))
    p.add_argument("--u0", type=float, default=0.5)
    p.add_argument("--u1", type=float)
    p.add_argument("--horizon", type=float, default=200.0)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--from-rest", action="store_true", help="start away from equilibrium under constant u1")
    p.add_argument("--out", required=True)

    p = common(sub.add_parser("adapt", help="precision and sensitivity of a step response"))
    p.add_argument("--u0", type=float)
    p.add_argument("--u1", type=float)
    p.add_argument("--out")
    p.add_argument("--require-pass", action="store_true")

    p = common(sub.add_parser("asi", help="approximate scale invariance of two scaled steps"))
    p.add_argument("--plot", help="write overlaid responses for plotting")
    p.add_argument("--require-pass", action="store_true")

    p = common(sub.add_parser("ulfo", help="uniform-linearization / fast-output analysis"))
    p.add_argument("--out")
    p.add_argument("--u-grid", type=_floats)
    p.add_argument("--p", type=float)
    p.add_argument("--table1")
    p.add_argument("--table2")
    p.add_argument("--table3")
    p.add_argument("--require-pass", action="store_true")

    p = common(sub.add_parser("reduce", help="full vs reduced step response"))
    p.add_argument("--u0", type=float, default=0.5)
    p.add_argument("--u1", type=float, default=0.6)
    p.add_argument("--out")

    p = sub.add_parser("dicty", help="Dictyostelium model step responses")
    p.add_argument("--step", type=_step, action="append", help="FROM:TO in nM, repeatable")
    p.add_argument("--v-pre", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--out")

    p = common(sub.add_parser("tables", help="linearization and homogeneity tables as CSV"))
    p.add_argument("--u-grid", type=_floats)
    p.add_argument("--table1", action="store_true")
    p.add_argument("--table2", action="store_true")
    p.add_argument("--table3", action="store_true")
    p.add_argument("--out")
    return parser


_OUTPUT_FLAGS = ("out", "plot", "table1", "table2", "table3")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.replay:
        try:
            recorded = read_manifest(args.replay)["argv"]
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: cannot read manifest {args.replay}: {exc}", file=sys.stderr)
            return EXIT_USAGE
        return main(recorded)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    warnings.simplefilter("default" if args.verbose else "ignore")
    try:
        cfg = _config(args)
        status = COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrationError, PreAdaptationError, MetricError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"analysis failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    for flag in _OUTPUT_FLAGS:
        path = getattr(args, flag, None)
        if isinstance(path, str) and path != "-":
            write_manifest(path, argv, cfg.to_dict())
    return status


if __name__ == "__main__":
    sys.exit(main())
