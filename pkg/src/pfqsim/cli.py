"""Command-line entry point: ``pfqsim <subcommand> ...``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import scenarios
from .campaign import (
    Campaign,
    CampaignReport,
    OutcomeClass,
    export_report,
    grid_for,
    import_report,
    load_campaign_config,
    sweep,
)
from .faultengine import FaultPulse, load_curve
from .isa.assembler import DEFAULT_BASE, AssemblyError, Program, assemble_text, format_listing
from .isa.encoding import UnencodableOperand
from .memhier import CacheConfig, InvalidConfiguration, events_to_csv
from .simulator import Simulator, available_backends

EXIT_USAGE = 2


class CliError(Exception):
    """Usage or I/O problem; reported on stderr with exit status 2."""


def _int(text: str) -> int:
    return int(text, 0)


def _reg_value(text: str) -> tuple[int, int]:
    name, _, value = text.partition("=")
    name = name.strip().lower()
    if not name.startswith("r") or not value:
        raise argparse.ArgumentTypeError(f"expected rN=VALUE, got {text!r}")
    reg = int(name[1:])
    if not 0 <= reg <= 12:
        raise argparse.ArgumentTypeError("only r0-r12 can be set")
    return reg, int(value, 0)


def _define(text: str) -> tuple[str, int]:
    name, _, value = text.partition("=")
    if not name or not value:
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got {text!r}")
    return name, int(value, 0)


# -- shared option groups ------------------------------------------------------

def _add_program_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("program", nargs="?", help="assembly source (.s) or flat binary (.bin)")
    src.add_argument("--scenario", help="built-in scenario name (see 'pfqsim scenario list')")
    p.add_argument("--base", type=_int, default=DEFAULT_BASE, help="flash base address")
    p.add_argument("-D", "--define", type=_define, action="append", default=[],
                   metavar="NAME=VALUE", help="assembler symbol")
    p.add_argument("--set", type=_reg_value, action="append", default=[], metavar="rN=VALUE",
                   dest="regs", help="initial register value")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", choices=list(CacheConfig.NAMES), default=None,
                   help="named cache configuration (default all-on)")
    p.add_argument("--icache", action=argparse.BooleanOptionalAction, default=None,
                   help="enable the instruction cache")
    p.add_argument("--dcache", action=argparse.BooleanOptionalAction, default=None,
                   help="enable the data cache")
    p.add_argument("--backend", choices=available_backends(), default=None,
                   help="simulation kernel")


def _config(args) -> CacheConfig:
    cfg = CacheConfig.named(args.config) if args.config else CacheConfig()
    i = cfg.i_cache_enabled if args.icache is None else args.icache
    d = cfg.d_cache_enabled if args.dcache is None else args.dcache
    if args.icache is False and args.dcache is None:
        d = False  # a lone --no-icache means all-off, not the rejected D-only mix
    return CacheConfig(i, d).validate()


def _load_program(path: str, base: int, defines: dict[str, int]) -> Program:
    p = Path(path)
    try:
        if p.suffix == ".bin":
            return Program.from_binary(p.read_bytes(), base)
        return assemble_text(p.read_text(), base, defines)
    except OSError as exc:
        raise CliError(str(exc)) from exc


def _target(args) -> tuple[Program, dict, dict, scenarios.Scenario | None]:
    """(program, register values, initial RAM, scenario or None)."""
    if args.scenario:
        try:
            sc = scenarios.get(args.scenario)
        except KeyError as exc:
            raise CliError(exc.args[0]) from None
        values = dict(sc.values)
        values.update(dict(args.regs))
        return sc.program, values, dict(sc.ram_init), sc
    program = _load_program(args.program, args.base, dict(args.define))
    return program, dict(args.regs), {}, None


def _print_regs(regs, out) -> None:
    names = [f"r{i}" for i in range(13)] + ["sp", "lr", "pc"]
    for row in range(0, 16, 4):
        print("  ".join(f"{names[i]:>3}={regs[i]:08x}" for i in range(row, row + 4)), file=out)


# -- subcommands ---------------------------------------------------------------

def cmd_asm(args, out) -> int:
    program = _load_program(args.source, args.base, dict(args.define))
    if args.output:
        Path(args.output).write_bytes(program.image)
        print(f"{len(program.image)} bytes, {len(program.instructions)} instructions "
              f"-> {args.output}", file=out)
    if args.listing or not args.output:
        print(format_listing(program.image, program.base_address), end="", file=out)
    return 0


def cmd_disasm(args, out) -> int:
    try:
        image = Path(args.binary).read_bytes()
    except OSError as exc:
        raise CliError(str(exc)) from exc
    print(format_listing(image, args.base), end="", file=out)
    return 0


def cmd_run(args, out) -> int:
    program, values, ram_init, _ = _target(args)
    sim = Simulator(program, _config(args), backend=args.backend)
    result = sim.run(sim.initial_state(values, ram_init), max_cycles=args.max_cycles)
    print(f"status: {result.status.name}  cycles: {result.state.cycles}  "
          f"flash refills: {result.flash_refills}", file=out)
    _print_regs(result.state.regs, out)
    if args.trace:
        for t in result.trace:
            print(f"{t.cycle:6d}  {t.pc:08x}  {program.instruction_at(t.source).format(t.pc)}",
                  file=out)
    if args.events:
        Path(args.events).write_text(events_to_csv(result.events))
    return 0


def _fault_campaign(args) -> tuple[Campaign, scenarios.Scenario | None]:
    program, values, ram_init, sc = _target(args)
    config = _config(args)
    curve = load_curve(args.curve) if args.curve else None
    camp = Campaign(program, config, values=values, ram_init=ram_init, curve=curve,
                    backend=args.backend, trigger=args.trigger,
                    functional_region=sc.functional_region if sc else None)
    return camp, sc


def cmd_fault(args, out) -> int:
    camp, sc = _fault_campaign(args)
    delay = args.delay_ns
    if delay is None:
        if sc is None:
            raise CliError("--delay-ns is required without --scenario")
        delay = sc.fault_delay_ns(camp)
    power = camp.curve.peak_power_dbm if args.power_dbm is None else args.power_dbm
    outcome = camp.run_one(FaultPulse(delay, power, args.seed), force=args.force)
    result = outcome.result
    tgt = result.fault_target
    print(f"delay_ns: {delay}  arm_cycle: {camp.arm_cycle(delay)}  power_dbm: {power:g}  "
          f"p: {1.0 if args.force else camp.curve(power):.3f}  fired: {outcome.fired}", file=out)
    if tgt is not None:
        print(f"target refill: #{tgt.sequence_index} line {tgt.line_base:08x} "
              f"at cycle {tgt.cycle} ({tgt.kind.value})", file=out)
    print(f"outcome: {outcome.outcome.value}  status: {result.status.name}", file=out)
    if outcome.outcome is OutcomeClass.MODEL_FAULT:
        view = sc or scenarios.Scenario("", "", "", camp.program, tgt.line_base)
        rep, skip = view.windows(outcome)
        print(f"replayed: {_range(rep)}  skipped: {_range(skip)}", file=out)
    _print_regs(result.state.regs, out)
    if args.trace:
        for t in result.trace:
            mark = "*" if t.replayed else " "
            print(f"{mark}{t.cycle:6d}  {t.pc:08x}  src {t.source:08x}", file=out)
    return 0


def _range(ordinals) -> str:
    if not ordinals:
        return "-"
    if len(ordinals) > 1 and list(ordinals) == list(range(ordinals[0], ordinals[-1] + 1)):
        return f"{ordinals[0]}-{ordinals[-1]}"
    return ",".join(str(k) for k in ordinals)


def _summarize_report(report: CampaignReport, out) -> None:
    rates = report.rate_by_power(pooled=True)
    best = report.rate_by_power(pooled=False)
    print("power_dbm  model_fault_rate(pooled)  best_cell_rate", file=out)
    for p in report.powers:
        print(f"{p:9g}  {rates[p]:24.3f}  {best[p]:14.3f}", file=out)
    totals = report.totals()
    print("totals: " + "  ".join(f"{o.value}={n}" for o, n in totals.items()), file=out)
    if totals[OutcomeClass.MODEL_FAULT]:
        print(f"peak ModelFault rate at {report.peak_power():g} dBm", file=out)


def cmd_campaign(args, out) -> int:
    try:
        cc = load_campaign_config(args.config_file)
    except (OSError, ValueError) as exc:
        raise CliError(f"{args.config_file}: {exc}") from exc
    if cc.scenario:
        sc = scenarios.get(cc.scenario)
        camp = sc.campaign(cc.config, curve=cc.curve, backend=args.backend)
    else:
        program = _load_program(str(cc.base_dir / cc.program), DEFAULT_BASE, {})
        camp = Campaign(program, cc.config, curve=cc.curve, backend=args.backend)
    grid = grid_for(camp, cc.grid, args.reps)
    seed = cc.seed if args.seed is None else args.seed
    jobs = cc.jobs if args.jobs is None else args.jobs
    report = sweep(camp, grid, seed, jobs=jobs)
    try:
        export_report(report, args.out)
    except OSError as exc:
        raise CliError(str(exc)) from exc
    print(f"{grid.n_cells} cells x {grid.reps} reps -> {args.out}", file=out)
    _summarize_report(report, out)
    return 0


def cmd_report(args, out) -> int:
    try:
        report = import_report(args.csv)
    except (OSError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    _summarize_report(report, out)
    return 0


def cmd_scenario(args, out) -> int:
    if args.action == "list":
        for name in scenarios.names():
            print(f"{name:34s} {scenarios.get(name).description}", file=out)
        return 0
    if not args.name:
        raise CliError("scenario run needs a name")
    try:
        sc = scenarios.get(args.name)
    except KeyError as exc:
        raise CliError(exc.args[0]) from None
    run = scenarios.run_scenario(sc, _config(args), force=not args.no_force,
                                 power_dbm=args.power_dbm, seed=args.seed, backend=args.backend)
    for line in scenarios.summarize(run):
        print(line, file=out)
    if args.source:
        print(sc.source, end="", file=out)
    return 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pfqsim",
                                     description="Prefetch-queue fault injection simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("asm", help="assemble a source file to a flat binary")
    p.add_argument("source")
    p.add_argument("-o", "--output", help="output binary (default: print the listing)")
    p.add_argument("--base", type=_int, default=DEFAULT_BASE)
    p.add_argument("-D", "--define", type=_define, action="append", default=[], metavar="NAME=VALUE")
    p.add_argument("--listing", action="store_true", help="also print the listing")
    p.set_defaults(func=cmd_asm)

    p = sub.add_parser("disasm", help="disassemble a flat binary")
    p.add_argument("binary")
    p.add_argument("--base", type=_int, default=DEFAULT_BASE)
    p.set_defaults(func=cmd_disasm)

    p = sub.add_parser("run", help="fault-free run")
    _add_program_args(p)
    _add_config_args(p)
    p.add_argument("--max-cycles", type=int, default=1_000_000)
    p.add_argument("--trace", action="store_true", help="print executed instructions")
    p.add_argument("--events", metavar="CSV", help="write fetch/refill events as CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("fault", help="single faulted run")
    _add_program_args(p)
    _add_config_args(p)
    p.add_argument("--delay-ns", type=int, help="pulse delay after the trigger "
                   "(default with --scenario: the fixture's target line)")
    power = p.add_mutually_exclusive_group()
    power.add_argument("--power-dbm", type=float, help="pulse power (default: curve peak)")
    power.add_argument("--force", action="store_true", help="fault always fires")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--curve", help="response curve JSON file")
    p.add_argument("--trigger", help="trigger label (default 'trigger' if defined, else reset)")
    p.add_argument("--trace", action="store_true", help="print the faulted trace")
    p.set_defaults(func=cmd_fault)

    p = sub.add_parser("campaign", help="run a (delay x power) sweep from a config file")
    p.add_argument("config_file")
    p.add_argument("--out", default="report.csv", help="CSV report path")
    p.add_argument("--jobs", type=int, help="worker processes (output does not depend on it)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--reps", type=int, help="override the repetitions per cell")
    p.add_argument("--backend", choices=available_backends(), default=None)
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("scenario", help="list or run built-in scenarios")
    p.add_argument("action", choices=["list", "run"])
    p.add_argument("name", nargs="?")
    _add_config_args(p)
    p.add_argument("--no-force", action="store_true", help="roll the fault instead of forcing it")
    p.add_argument("--power-dbm", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--source", action="store_true", help="print the fixture source")
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("report", help="summarize a CSV campaign report")
    p.add_argument("csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except AssemblyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UnencodableOperand, InvalidConfiguration, CliError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
