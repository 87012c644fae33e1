"""Command line: init, simulate, estimate, replay.

Exit codes: 0 ok, 2 configuration or usage error, 3 safety violation
detected, 4 replay divergence.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from . import analysis, estimators
from .config import ConfigError, Scenario, dump_scenario, load_scenario, scenario_from_dict, with_overrides
from .netsim import simulate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SAFETY = 3
EXIT_DIVERGED = 4

log = logging.getLogger("acpsim")


def _setup_logging() -> None:
    level = os.environ.get("ACP_SIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="acpsim", description="ACP consensus simulator and estimators")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init", help="write a scenario file with every default filled in")
    s.add_argument("--config", default="-", help="output path, '-' for stdout")
    s.add_argument("--seed", type=int)
    s.add_argument("--rounds", type=int)

    s = sub.add_parser("simulate", help="run a scenario, write trace and reports")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--rounds", type=int)
    s.add_argument("--out", default=None, help="output directory")
    s.add_argument("--runs", type=int, default=1, help="run K consecutive seeds")

    s = sub.add_parser("estimate", help="analytic agreement time, throughput table, block time")
    s.add_argument("--table", action="store_true", help="print the throughput table")
    s.add_argument("--blocktime", nargs="*", metavar="KEY=VALUE",
                   help="block-time lhs for N, h, BS, bandwidth, rtt, t_block")
    s.add_argument("--symmetric", action="store_true", help="N_fc^2 in the fourth message-volume term")
    s.add_argument("--out", default=None, help="directory for CSV output")

    s = sub.add_parser("replay", help="re-run a trace's scenario and compare")
    s.add_argument("trace")
    return p


# -- simulate ---------------------------------------------------------------


def write_outputs(lines, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    trace_path = os.path.join(out_dir, "trace.jsonl")
    with open(trace_path, "w") as fh:
        fh.writelines(lines)
    rep = analysis.analyze_lines(lines)
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write(analysis.render_text(rep))
    with open(os.path.join(out_dir, "rounds.csv"), "w") as fh:
        fh.write(analysis.rounds_csv(rep))
    with open(os.path.join(out_dir, "verdicts.csv"), "w") as fh:
        fh.write(analysis.verdicts_csv(rep))
    with open(os.path.join(out_dir, "ledger.csv"), "w") as fh:
        fh.write(analysis.ledger_csv(rep))
    return trace_path, rep


def _run_one(args):
    sc, out_dir = args
    result = simulate(sc)
    trace_path, rep = write_outputs(result.lines, out_dir)
    return sc.seed, trace_path, rep.safe, analysis.render_text(rep)


def cmd_simulate(ns) -> int:
    try:
        sc = load_scenario(ns.config)
        kw = {}
        if ns.seed is not None:
            kw["seed"] = ns.seed
        if ns.rounds is not None:
            kw["rounds"] = ns.rounds
        if kw:
            sc = with_overrides(sc, **kw)
            sc.validate()
        if ns.runs < 1:
            raise ConfigError("--runs", "must be >= 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = ns.out or sc.report_dir
    jobs = []
    for k in range(ns.runs):
        s = with_overrides(sc, seed=sc.seed + k) if k else sc
        jobs.append((s, out if ns.runs == 1 else os.path.join(out, f"seed-{s.seed}")))
    if len(jobs) == 1:
        results = [_run_one(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=min(len(jobs), os.cpu_count() or 1)) as ex:
            results = list(ex.map(_run_one, jobs))
    code = EXIT_OK
    for seed, trace_path, safe, text in results:
        log.info("seed %d trace %s", seed, trace_path)
        print(f"== seed {seed} ({trace_path})")
        print(text, end="")
        if not safe:
            code = EXIT_SAFETY
    return code


# -- estimate ---------------------------------------------------------------

_BLOCKTIME_KEYS = {"n": "n_all", "h": "hops", "bs": "block_size", "bandwidth": "bandwidth",
                   "rtt": "rtt", "t_block": "t_block"}


def parse_blocktime(pairs) -> estimators.EstimatorInput:
    inp = estimators.EstimatorInput(n_all=10_000)
    kw = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        field_name = _BLOCKTIME_KEYS.get(key.strip().lower())
        if not sep or field_name is None:
            raise ConfigError("--blocktime", f"expected one of N, h, BS, bandwidth, rtt, t_block as KEY=VALUE, got {pair!r}")
        try:
            num = float(value)
        except ValueError:
            raise ConfigError(f"--blocktime {key}", f"not a number: {value!r}") from None
        kw[field_name] = int(num) if field_name in ("n_all", "hops", "block_size") else num
    inp = replace(inp, **kw)
    try:
        inp.validate()
    except ValueError as exc:
        raise ConfigError("--blocktime", str(exc)) from None
    return inp


def cmd_estimate(ns) -> int:
    inp = estimators.EstimatorInput()
    try:
        bt = parse_blocktime(ns.blocktime) if ns.blocktime is not None else None
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"agreement time: {estimators.agreement_time(inp):g} ms")
    print(f"message volume: {estimators.message_volume(inp, symmetric=ns.symmetric)}"
          + (" (symmetric fourth term)" if ns.symmetric else ""))
    rows = estimators.throughput_table()
    if ns.table:
        print(f"{'preset':<10}{'block':>7}{'agree s':>9}{'tps':>12}{'published':>11}{'rel err':>10}")
        for name, mb, secs, tps, pub in rows:
            err = abs(tps - pub) / pub
            print(f"{name:<10}{mb:>5}MB{secs:>9}{tps:>12.1f}{pub:>11}{err:>10.5f}")
    if bt is not None:
        lhs = estimators.block_time_lhs(bt)
        verdict = "feasible" if lhs <= bt.t_block else "infeasible"
        print(f"block time lhs: {lhs:.3f} ms (N={bt.n_all}, h={bt.hops}, BS={bt.block_size}, "
              f"bandwidth={bt.bandwidth:g}) {verdict} against {bt.t_block:g} ms")
    if ns.out:
        os.makedirs(ns.out, exist_ok=True)
        with open(os.path.join(ns.out, "throughput.csv"), "w") as fh:
            fh.write("preset,block_mb,agreement_s,tps,published\n")
            for name, mb, secs, tps, pub in rows:
                fh.write(f"{name},{mb},{secs},{tps:.4f},{pub}\n")
        with open(os.path.join(ns.out, "blocktime.csv"), "w") as fh:
            fh.write(estimators.blocktime_curves(
                n_values=(1_000, 10_000, 100_000, 1_000_000),
                hop_values=(1, 2, 3, 4),
                block_sizes=(1 << 20, 2 << 20, 4 << 20, 8 << 20),
                bandwidths=(1e7, 1e8, 1e9),
            ))
    return EXIT_OK


# -- replay -----------------------------------------------------------------


def replay_lines(lines):
    """(ok, index of first differing line or None, expected, got)."""
    if not lines:
        return False, 0, None, None
    header, _ = analysis.parse_lines(lines[:1])
    sc = scenario_from_dict(header["scenario"])
    fresh = simulate(sc).lines
    for i, (a, b) in enumerate(zip(lines, fresh)):
        if a != b:
            return False, i, a, b
    if len(lines) != len(fresh):
        i = min(len(lines), len(fresh))
        return False, i, lines[i] if i < len(lines) else None, fresh[i] if i < len(fresh) else None
    return True, None, None, None


def cmd_replay(ns) -> int:
    try:
        with open(ns.trace) as fh:
            lines = fh.readlines()
        ok, idx, expected, got = replay_lines(lines)
    except OSError as exc:
        print(f"config error: cannot read {ns.trace}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if ok:
        print(f"OK {len(lines)} lines")
        return EXIT_OK
    print(f"DIVERGED at line {idx + 1}")
    print(f"  trace:  {expected.rstrip() if expected else '<end of trace>'}")
    print(f"  replay: {got.rstrip() if got else '<end of replay>'}")
    return EXIT_DIVERGED


# -- init -------------------------------------------------------------------


def cmd_init(ns) -> int:
    sc = Scenario()
    kw = {}
    if ns.seed is not None:
        kw["seed"] = ns.seed
    if ns.rounds is not None:
        kw["rounds"] = ns.rounds
    if kw:
        sc = with_overrides(sc, **kw)
    try:
        sc.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = dump_scenario(sc)
    if ns.config == "-":
        sys.stdout.write(text)
    else:
        with open(ns.config, "w") as fh:
            fh.write(text)
        print(f"wrote {ns.config}")
    return EXIT_OK


def main(argv=None) -> int:
    _setup_logging()
    ns = build_parser().parse_args(argv)
    handler = {"init": cmd_init, "simulate": cmd_simulate, "estimate": cmd_estimate, "replay": cmd_replay}
    return handler[ns.command](ns)


if __name__ == "__main__":
    sys.exit(main())
