"""``wavestab`` command-line entry point.

Exit codes: 0 success (including "unknown" verdicts), 1 validation failure,
2 input error, 3 SDP solver unavailable.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import mapper
from .errors import DomainError, GateError, NotHurwitz, SolverUnavailable, WavestabError
from .model import CoupledSystem, WaveChannel, classify, equilibria, load_plant, make_channel
from .systems import BUILTIN

log = logging.getLogger("wavestab")

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2, 3
ALL_METHODS = "ctcr,smallgain,qs,sim"


class InputError(Exception):
    pass


def _g(x) -> str:
    """Human rounding: 6 significant digits."""
    if isinstance(x, float):
        return "inf" if math.isinf(x) else f"{x:.6g}"
    return str(x)


def _csv_list(text: str, cast=str) -> list:
    try:
        return [cast(v.strip()) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(f"bad list {text!r}: {exc}") from exc


def _load_system(name_or_path: str | None):
    if not name_or_path:
        raise InputError("--system is required")
    if name_or_path in BUILTIN and not os.path.exists(name_or_path):
        return BUILTIN[name_or_path]
    if not os.path.exists(name_or_path):
        raise InputError(f"system file not found: {name_or_path} (builtins: {', '.join(BUILTIN)})")
    return load_plant(name_or_path)


def _channel(args) -> WaveChannel:
    phys = args.c is not None or args.c0 is not None
    delay = args.c1 is not None or args.tau is not None
    if phys and delay:
        raise InputError("give either --c/--c0 or --c1/--tau, not both")
    if phys:
        if args.c is None or args.c0 is None:
            raise InputError("--c and --c0 must be given together")
        return make_channel(args.c, args.c0)
    if args.c1 is None or args.tau is None:
        raise InputError("a channel point needs --c and --c0, or --c1 and --tau")
    return WaveChannel.from_delay(args.c1, args.tau)


def _emit(args, payload: dict, human: list[str]) -> None:
    # files always get the full-precision JSON; the terminal gets the rounded report
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=1) + "\n")
    print(json.dumps(payload, indent=1) if args.format == "json" else "\n".join(human))


# -- commands -------------------------------------------------------------


def cmd_analyze(args) -> int:
    from .ctcr import stable_intervals
    from .ndde_sim import classify_trajectory, default_config, growth_rate, simulate
    from .qs import qs_feasible
    from .sdp import get_backend
    from .smallgain import hinf_norm, small_gain_verdict

    plant = _load_system(args.system)
    ch = _channel(args)
    methods = _csv_list(args.methods or ALL_METHODS)
    unknown = set(methods) - set(mapper.METHODS)
    if unknown:
        raise InputError(f"unknown methods: {sorted(unknown)}")
    orders = _csv_list(args.orders or "0,1,2,3", int)
    sys_ = CoupledSystem(plant, ch)
    cls = classify(sys_)
    eq = equilibria(sys_)
    rep = {
        "system": plant.name,
        "channel": {"c": ch.c, "c0": ch.c0, "c1": ch.c1, "tau": ch.tau, "alpha": ch.alpha},
        "classification": {"kind": cls.kind.value, "small_tau_stabilizable": cls.small_tau_stabilizable},
        "gates": {"stabilizable": cls.small_tau_stabilizable, "unique_equilibrium": eq.unique},
        "methods": {},
    }
    human = [
        f"system {plant.name}: c={_g(ch.c)} c0={_g(ch.c0)} (c1={_g(ch.c1)}, tau={_g(ch.tau)}, alpha={_g(ch.alpha)})",
        f"class: {cls.kind.value}, small-delay stabilizable: {cls.small_tau_stabilizable}, unique equilibrium: {eq.unique}",
    ]
    if "ctcr" in methods:
        if cls.small_tau_stabilizable:
            tau_max = args.tau_max or max(5.0, 2.0 * ch.tau)
            acc = stable_intervals(plant, ch.c1, tau_max)
            k = acc.count_at(ch.tau)
            verdict = "stable" if k == 0 else "unstable"
            rep["methods"]["ctcr"] = {"verdict": verdict, "unstable_roots": k, **acc.to_dict()}
            human.append(f"ctcr: {verdict} ({k} unstable roots); stable tau-intervals: "
                         + ", ".join(f"({_g(lo)}, {_g(hi)})" for lo, hi in acc.stable_intervals))
            for e in acc.events:
                human.append(f"  crossing w={_g(e.omega)} T={_g(e.T)} tendency={e.tendency:+d} delays=" + ",".join(_g(d) for d in e.delays))
        else:
            rep["methods"]["ctcr"] = {"verdict": "unknown", "detail": "channel not small-delay stabilizable"}
            human.append("ctcr: unknown (channel not small-delay stabilizable)")
    if "smallgain" in methods:
        try:
            h = hinf_norm(plant)
            v = small_gain_verdict(sys_, h)
            rep["methods"]["smallgain"] = {"verdict": v.value, "hinf": h.norm, "peak_frequency": h.peak_frequency}
            human.append(f"smallgain: {v.value} (||H||inf={_g(h.norm)} at w={_g(h.peak_frequency)})")
        except NotHurwitz as exc:
            rep["methods"]["smallgain"] = {"verdict": "inapplicable", "detail": str(exc)}
            human.append("smallgain: inapplicable (A not Hurwitz)")
    if "qs" in methods:
        backend = get_backend(args.solver)
        out = {}
        for N in orders:
            r = qs_feasible(N, plant, ch, backend)
            out[str(N)] = {"verdict": r.verdict.value, "margin": r.margin, "status": r.status, "witness": r.witness_json()}
            human.append(f"qs N={N}: {r.verdict.value} (margin {_g(r.margin)})")
        rep["methods"]["qs"] = out
    if "sim" in methods:
        if cls.small_tau_stabilizable:
            traj = simulate(sys_, default_config(sys_))
            c = classify_trajectory(traj)
            rep["methods"]["sim"] = {"verdict": c.value, "growth_rate": growth_rate(traj), "outcome": traj.outcome.value}
            human.append(f"sim: {c.value} (log-norm slope {_g(growth_rate(traj))})")
        else:
            rep["methods"]["sim"] = {"verdict": "refused", "detail": "|alpha| = 1"}
            human.append("sim: refused (|alpha| = 1)")
    _emit(args, rep, human)
    return EXIT_OK


def _grid(args) -> mapper.GridSpec:
    if not args.grid:
        raise InputError("--grid is required")
    methods = _csv_list(args.methods or "ctcr")
    orders = _csv_list(args.orders or "0", int)
    return mapper.GridSpec.parse(args.grid, methods, orders, args.coords)


def _progress(done, total):
    log.info("columns %d/%d", done, total)


def cmd_map(args) -> int:
    plant = _load_system(args.system)
    grid = _grid(args)
    if args.resume and not args.out:
        raise InputError("--resume needs --out pointing at an earlier CSV")
    resume = args.out if args.resume and args.format == "csv" else None
    table = mapper.sweep(plant, grid, jobs=args.jobs, resume_from=resume, progress=_progress)
    text = table.to_csv() if args.format == "csv" else table.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.gnuplot:
        key = args.gnuplot_key or (table.keys()[0] if table.keys() else "ctcr")
        Path(args.gnuplot).write_text(table.to_gnuplot(key))
    if grid.coords == "c0c" and args.cmin:
        for c0, cmin in mapper.cmin_extraction(table, args.cmin):
            print(f"c0={_g(c0)} c_min={_g(cmin)}", file=sys.stderr)
    return EXIT_OK


def cmd_hinf(args) -> int:
    from .smallgain import hinf_norm

    plant = _load_system(args.system)
    try:
        h = hinf_norm(plant)
    except NotHurwitz as exc:
        raise InputError(str(exc)) from exc
    _emit(args, {"system": plant.name, "hinf": h.norm, "peak_frequency": h.peak_frequency, "iterations": h.iterations},
          [f"||H||inf = {_g(h.norm)} at w = {_g(h.peak_frequency)}"])
    return EXIT_OK


def cmd_ctcr_intervals(args) -> int:
    from .ctcr import stable_intervals

    plant = _load_system(args.system)
    if args.c1 is None:
        raise InputError("--c1 is required")
    tau_max = args.tau_max or 5.0
    acc = stable_intervals(plant, args.c1, tau_max)
    human = [f"c1={_g(args.c1)}: {acc.nu_at_zero} unstable roots at tau=0+"]
    human += [f"  ({_g(lo)}, {_g(hi)}] unstable roots: {k}" for lo, hi, k in acc.intervals]
    human.append("stable: " + (", ".join(f"({_g(lo)}, {_g(hi)})" for lo, hi in acc.stable_intervals) or "none"))
    _emit(args, acc.to_dict(), human)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .ndde_sim import SimConfig, classify_trajectory, default_config, growth_rate, simulate

    plant = _load_system(args.system)
    sys_ = CoupledSystem(plant, _channel(args))
    base = default_config(sys_)
    x0 = tuple(_csv_list(args.x0, float)) if args.x0 else None
    if x0 is not None and len(x0) != plant.n:
        raise InputError(f"--x0 needs {plant.n} values")
    cfg = SimConfig(t_end=args.t_end or base.t_end, steps_per_delay=args.steps_per_delay or base.steps_per_delay, x0=x0)
    traj = simulate(sys_, cfg)
    if args.out:
        traj.to_csv(args.out)
    c = classify_trajectory(traj)
    print(f"{c.value} (log-norm slope {_g(growth_rate(traj))}, {traj.outcome.value}, {len(traj.times)} samples)")
    return EXIT_OK


def cmd_validate(args) -> int:
    plant = _load_system(args.system)
    grid = _grid(args)
    if "ctcr" not in grid.methods:
        raise InputError("validate needs ctcr among --methods")
    table = mapper.sweep(plant, grid, jobs=args.jobs, progress=_progress)
    if args.inject_fault:
        _inject_fault(table)
    bad = mapper.containment_violations(table)
    if args.samples <= 0:
        print("warning: no cells sampled; simulator agreement is vacuous", file=sys.stderr)
        sample = []
    else:
        sample = mapper.stratified_sample(table, args.samples, args.seed)
        if args.inject_fault and not any(k for k in table.keys() if k != "ctcr"):
            sample = _merge(sample, [c for c in table.cells if c.verdicts["ctcr"].detail == "injected"])
    bad += mapper.simulator_disagreements(plant, sample)
    print(f"cells: {len(table)}, sampled for simulation: {len(sample)}, violations: {len(bad)}")
    for v in bad:
        print(f"  FAIL {v.kind} at cell {v.cell} (c1={_g(v.c1)}, tau={_g(v.tau)}) {v.detail}")
    print("PASS" if not bad else "FAIL")
    return EXIT_OK if not bad else EXIT_FAIL


def _merge(sample, extra):
    seen = {(c.i, c.j) for c in sample}
    return sorted(sample + [c for c in extra if (c.i, c.j) not in seen], key=lambda c: (c.i, c.j))


def _inject_fault(table: mapper.MapTable) -> None:
    """Test hook: corrupt one interior CTCR-unstable cell so validation must fail."""
    inner = [k for k in table.keys() if k != "ctcr"]
    victims = [c for c in table.cells if not c.boundary and c.is_stable("ctcr") is False]
    if not victims:
        victims = [c for c in table.cells if not c.boundary and c.is_stable("ctcr")]
    if not victims:
        raise InputError("fault injection found no interior cell")
    c = victims[len(victims) // 2]
    if inner:
        c.verdicts[inner[0]] = mapper.Verdict("stable", "injected")
    else:
        flip = "stable" if c.verdicts["ctcr"].verdict == "unstable" else "unstable"
        c.verdicts["ctcr"] = mapper.Verdict(flip, "injected")
    log.warning("injected fault at cell (%d, %d)", c.i, c.j)


def cmd_export_sdp(args) -> int:
    from .qs import assemble_problem, build_lmi
    from .sdp import to_sdpa

    plant = _load_system(args.system)
    ch = _channel(args)
    orders = _csv_list(args.orders or "0", int)
    if len(orders) != 1:
        raise InputError("export-sdp takes a single --orders value")
    from .model import require_stabilizable

    require_stabilizable(ch)
    lp, _ = build_lmi(assemble_problem(orders[0], plant, ch))
    text = to_sdpa(lp)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "analyze": cmd_analyze,
    "map": cmd_map,
    "hinf": cmd_hinf,
    "ctcr-intervals": cmd_ctcr_intervals,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "export-sdp": cmd_export_sdp,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option defaults (flags override it)")
    common.add_argument("--system", help="system JSON path or builtin name (stable, unstable, pockets)")
    common.add_argument("--c", type=float)
    common.add_argument("--c0", type=float)
    common.add_argument("--c1", type=float)
    common.add_argument("--tau", type=float)
    common.add_argument("--methods", help=f"comma list from {ALL_METHODS}")
    common.add_argument("--orders", help="comma list of QS orders")
    common.add_argument("--grid", help="c1=lo:hi:n,tau=lo:hi:n (or c0=..,c=.. with --coords c0c)")
    common.add_argument("--coords", choices=["c1tau", "c0c"], default="c1tau")
    common.add_argument("--out")
    common.add_argument("--format", choices=["csv", "json", "text"], default=None)
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    common.add_argument("--tau-max", type=float)
    common.add_argument("--solver", help="SDP backend (overrides WAVESTAB_SOLVER)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="wavestab", description="Stability analysis of an LTI plant coupled through a damped string.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "map":
            sp.add_argument("--resume", action="store_true", help="reuse completed cells from the existing --out CSV")
            sp.add_argument("--gnuplot", help="also write a gnuplot matrix here")
            sp.add_argument("--gnuplot-key", help="verdict key for the matrix, e.g. ctcr, qs:2, qs_min_order")
            sp.add_argument("--cmin", help="log the c_min curve for this verdict key (c0c grids)")
        if name == "simulate":
            sp.add_argument("--t-end", type=float)
            sp.add_argument("--steps-per-delay", type=int)
            sp.add_argument("--x0", help="comma list: constant initial state (default all ones)")
        if name == "validate":
            sp.add_argument("--samples", type=int, default=50)
            sp.add_argument("--inject-fault", action="store_true", help="test mode: corrupt one verdict")
    return p


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise InputError("config file must hold a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    extra = sorted(set(k.replace("-", "_") for k in cfg) - known)
    if extra:
        raise InputError(f"unknown config keys: {extra}")
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        if args.format is None:
            args.format = "csv" if args.command == "map" else "text"
        if args.command == "map" and args.format not in ("csv", "json"):
            raise InputError("map output --format must be csv or json")
        return COMMANDS[args.command](args)
    except SolverUnavailable as exc:
        print(f"error: solver unavailable: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InputError, DomainError, GateError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except WavestabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
