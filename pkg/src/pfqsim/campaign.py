"""Fault campaigns: golden run, (delay x power) sweeps and outcome classification."""

from __future__ import annotations

import csv
import enum
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .faultengine import (
    FaultOutcomePrediction,
    FaultPulse,
    PredictionUnavailable,
    ResponseCurve,
    curve_from_mapping,
    default_curve,
    predict,
    roll_fault,
)
from .isa.assembler import LINE_BYTES, Program
from .isa.machine import ArchSnapshot, MachineState
from .memhier import CacheConfig, cycles_to_ns, ns_to_cycles
from .simulator import RunResult, Simulator

__all__ = [
    "BUDGET_FACTOR",
    "CSV_HEADER",
    "Campaign",
    "CampaignReport",
    "CellCounts",
    "GoldenRun",
    "GoldenRunCrashed",
    "OutcomeClass",
    "RunOutcome",
    "SweepGrid",
    "cell_rolls",
    "classify",
    "export_report",
    "golden_run",
    "import_report",
    "load_campaign_config",
    "replay_window",
    "run_one",
    "sweep",
]

BUDGET_FACTOR = 10

CSV_HEADER = ("delay_ns", "delay_cycle", "power_dbm", "n_runs", "n_normal", "n_model_fault",
              "n_other_fault", "n_crash", "n_no_effect")


class OutcomeClass(enum.Enum):
    NORMAL = "Normal"
    MODEL_FAULT = "ModelFault"
    OTHER_FAULT = "OtherFault"
    CRASH = "Crash"
    NO_EFFECT = "NoEffect"


_COLUMN = {
    OutcomeClass.NORMAL: "n_normal",
    OutcomeClass.MODEL_FAULT: "n_model_fault",
    OutcomeClass.OTHER_FAULT: "n_other_fault",
    OutcomeClass.CRASH: "n_crash",
    OutcomeClass.NO_EFFECT: "n_no_effect",
}


class GoldenRunCrashed(RuntimeError):
    def __init__(self, result: RunResult):
        self.result = result
        super().__init__(f"golden run ended with {result.status.name} at {result.fault_address:#010x}")


@dataclass(frozen=True)
class GoldenRun:
    initial_state: ArchSnapshot
    final_state: ArchSnapshot
    trace: tuple[int, ...]
    pcs: tuple[int, ...]
    cycles: int
    trigger_cycle: int
    refill_cycles: tuple[int, ...]
    functional_output: bytes | None = None


def _functional_output(state: MachineState, region: tuple[int, int] | None) -> bytes | None:
    if region is None:
        return None
    addr, length = region
    off = addr - state.ram_base
    return bytes(state.ram[off:off + length])


def _trigger_cycle(program: Program, result: RunResult, trigger: str | int | None) -> int:
    if isinstance(trigger, int):
        return trigger
    name = trigger or "trigger"
    addr = program.symbols.get(name)
    if addr is None:
        if trigger is not None:
            raise KeyError(f"trigger label {name!r} not defined")
        return 0
    for entry in result.trace:
        if entry.pc == addr:
            return entry.cycle
    raise ValueError(f"trigger label {name!r} is never executed")


def golden_run(program: Program, config: CacheConfig = CacheConfig(), *,
               values: dict[int, int] | None = None, ram_init: dict[int, bytes] | None = None,
               functional_region: tuple[int, int] | None = None,
               trigger: str | int | None = None, backend: str | None = None) -> GoldenRun:
    """Fault-free reference execution; any crash is raised as GoldenRunCrashed.

    The trigger cycle is `trigger` itself when an int, else the first cycle at
    which the named label (default ``trigger``) executes, else 0.
    """
    sim = Simulator(program, config, backend=backend)
    init = sim.initial_state(values, ram_init)
    result = sim.run(init)
    if result.crashed:
        raise GoldenRunCrashed(result)
    return GoldenRun(
        init.snapshot(),
        result.snapshot(),
        tuple(result.ordinals(program)),
        tuple(t.pc for t in result.trace),
        result.state.cycles,
        _trigger_cycle(program, result, trigger),
        tuple(e.cycle for e in result.events),
        _functional_output(result.state, functional_region),
    )


# -- classification ----------------------------------------------------------

def replay_window(program: Program, result: RunResult) -> tuple[int, int] | None:
    """(start, end) trace indices of the contiguous block executed from stale bytes."""
    idx = [i for i, t in enumerate(result.trace) if t.replayed]
    if not idx:
        return None
    start, end = idx[0], idx[-1] + 1
    if end - start != len(idx):
        return None
    return start, end


def _matches_model(program: Program, golden: GoldenRun, result: RunResult) -> bool:
    target = result.fault_target
    window = replay_window(program, result)
    if window is None:
        return False
    start, end = window
    trace = result.trace
    if tuple(t.pc for t in trace[:start]) != golden.pcs[:start]:
        return False
    line = target.line_base
    block = trace[start:end]
    stale = block[0].source & ~(LINE_BYTES - 1)
    if stale == line:
        return False
    if start:
        # an instruction straddling into the target line got stale upper bytes
        prev = trace[start - 1]
        if prev.pc < line < prev.pc + program.instruction_at(prev.source).size:
            return False
    for t in block:
        if t.pc & ~(LINE_BYTES - 1) != line or program.ordinal_of(t.source) is None:
            return False
        if t.source - stale != t.pc - line:
            return False
        if t.pc - line + program.instruction_at(t.source).size > LINE_BYTES:
            return False
    replayed = tuple(program.ordinal_of(t.source) for t in block)
    try:
        pred = predict(program, line)
    except (PredictionUnavailable, ValueError):
        # No analytical window: a well-formed stale block is the model.
        return True
    if replayed != pred.replayed:
        return False
    if end < len(trace):
        return program.ordinal_of(trace[end].pc) == pred.resume_at
    return pred.resume_at is None


def classify(program: Program, golden: GoldenRun, result: RunResult) -> OutcomeClass:
    if result.crashed:
        return OutcomeClass.CRASH
    if result.fault_target is None:
        return OutcomeClass.NO_EFFECT
    if result.snapshot() == golden.final_state:
        return OutcomeClass.NORMAL
    if result.fault_fired and _matches_model(program, golden, result):
        return OutcomeClass.MODEL_FAULT
    return OutcomeClass.OTHER_FAULT


# -- campaign object ---------------------------------------------------------

@dataclass(frozen=True)
class RunOutcome:
    outcome: OutcomeClass
    result: RunResult
    fired: bool

    @property
    def final_state(self) -> ArchSnapshot:
        return self.result.snapshot()

    @property
    def trace(self) -> list[int | None]:
        return [t.source for t in self.result.trace]


class Campaign:
    """A program, its inputs and a cache configuration, with the golden run cached."""

    def __init__(self, program: Program, config: CacheConfig = CacheConfig(), *,
                 values: dict[int, int] | None = None, ram_init: dict[int, bytes] | None = None,
                 functional_region: tuple[int, int] | None = None,
                 trigger: str | int | None = None, curve: ResponseCurve | None = None,
                 backend: str | None = None, validate: bool = True):
        if validate:
            config.validate()
        self.program = program
        self.config = config
        self.values = dict(values or {})
        self.ram_init = dict(ram_init or {})
        self.functional_region = functional_region
        self.curve = curve or default_curve(config)
        self.backend = backend
        self.sim = Simulator(program, config, backend=backend)
        self.golden = golden_run(program, config, values=values, ram_init=ram_init,
                                 functional_region=functional_region, trigger=trigger,
                                 backend=backend)
        self.max_cycles = max(BUDGET_FACTOR * self.golden.cycles, 64)

    @property
    def trigger_cycle(self) -> int:
        return self.golden.trigger_cycle

    def initial_state(self) -> MachineState:
        return self.sim.initial_state(self.values, self.ram_init)

    def arm_cycle(self, delay_ns: int) -> int:
        return self.trigger_cycle + ns_to_cycles(delay_ns)

    def execute(self, arm_cycle: int, fire: bool) -> RunOutcome:
        result = self.sim.arm(arm_cycle, fire).run(self.initial_state(), max_cycles=self.max_cycles)
        return RunOutcome(classify(self.program, self.golden, result), result, fire)

    def run_one(self, pulse: FaultPulse, *, force: bool = False) -> RunOutcome:
        fire = True if force else roll_fault(pulse, self.curve)
        return self.execute(self.arm_cycle(pulse.delay_ns), fire)

    def delay_for_line(self, line_base: int, occurrence: int = 1) -> int:
        """Smallest delay (ns from the trigger) whose pulse targets a refill of `line_base`."""
        result = self.sim.run(self.initial_state(), max_cycles=self.max_cycles)
        seen = 0
        previous = self.trigger_cycle - 1
        for ev in result.events:
            if ev.cycle < self.trigger_cycle:
                continue
            if ev.line_base == line_base:
                seen += 1
                if seen == occurrence:
                    return cycles_to_ns(max(previous + 1, self.trigger_cycle) - self.trigger_cycle)
            previous = ev.cycle
        raise ValueError(f"line {line_base:#x} is not refilled {occurrence} time(s) after the trigger")

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.program.base_address.to_bytes(4, "little"))
        h.update(self.program.image)
        return h.hexdigest()[:16]

    def predict(self, line_base: int) -> FaultOutcomePrediction:
        return predict(self.program, line_base)


def run_one(program: Program, config: CacheConfig, pulse: FaultPulse, *,
            force: bool = False, curve: ResponseCurve | None = None, **kwargs) -> RunOutcome:
    return Campaign(program, config, curve=curve, **kwargs).run_one(pulse, force=force)


# -- sweeps ------------------------------------------------------------------

def _arange(start: float, stop: float, step: float) -> tuple[float, ...]:
    """Inclusive arithmetic sequence from start towards stop, rounded to 1e-6."""
    if step <= 0:
        raise ValueError("step must be positive")
    sign = 1 if stop >= start else -1
    n = int(np.floor(abs(stop - start) / step + 1e-9)) + 1
    return tuple(round(start + sign * i * step, 6) for i in range(n))


@dataclass(frozen=True)
class SweepGrid:
    delays_ns: tuple[int, ...]
    powers_dbm: tuple[float, ...]
    reps: int = 500

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not self.delays_ns or not self.powers_dbm:
            raise ValueError("grid needs at least one delay and one power")
        if any(d < 0 for d in self.delays_ns):
            raise ValueError("delays must be non-negative")

    @classmethod
    def build(cls, *, delay_start_ns: int = 0, delay_stop_ns: int, delay_step_ns: int = 1,
              power_start_dbm: float, power_stop_dbm: float = -5.0, power_step_dbm: float = 0.5,
              reps: int = 500) -> "SweepGrid":
        if delay_step_ns <= 0:
            raise ValueError("delay step must be positive")
        delays = tuple(range(delay_start_ns, delay_stop_ns + 1, delay_step_ns))
        return cls(delays, _arange(power_start_dbm, power_stop_dbm, power_step_dbm), reps)

    @classmethod
    def default(cls, config: CacheConfig, delay_stop_ns: int, reps: int = 500) -> "SweepGrid":
        """Protocol grid: 1 ns delay steps; powers descend by 0.5 dBm to -5 dBm
        from 0 dBm with both caches on, from 4 dBm otherwise."""
        start = 0.0 if config.caches_on else 4.0
        return cls.build(delay_stop_ns=delay_stop_ns, power_start_dbm=start, reps=reps)

    @property
    def n_cells(self) -> int:
        return len(self.delays_ns) * len(self.powers_dbm)


@dataclass
class CellCounts:
    delay_ns: int
    delay_cycle: int
    power_dbm: float
    n_runs: int = 0
    n_normal: int = 0
    n_model_fault: int = 0
    n_other_fault: int = 0
    n_crash: int = 0
    n_no_effect: int = 0

    def add(self, outcome: OutcomeClass, n: int = 1) -> None:
        setattr(self, _COLUMN[outcome], getattr(self, _COLUMN[outcome]) + n)
        self.n_runs += n

    def count(self, outcome: OutcomeClass) -> int:
        return getattr(self, _COLUMN[outcome])

    def rate(self, outcome: OutcomeClass = OutcomeClass.MODEL_FAULT) -> float:
        return self.count(outcome) / self.n_runs if self.n_runs else 0.0

    def row(self) -> tuple:
        return (self.delay_ns, self.delay_cycle, f"{self.power_dbm:g}", self.n_runs, self.n_normal,
                self.n_model_fault, self.n_other_fault, self.n_crash, self.n_no_effect)


@dataclass
class CampaignReport:
    cells: list[CellCounts]
    metadata: dict = field(default_factory=dict)

    def cell(self, delay_ns: int, power_dbm: float) -> CellCounts:
        for c in self.cells:
            if c.delay_ns == delay_ns and abs(c.power_dbm - power_dbm) < 1e-9:
                return c
        raise KeyError((delay_ns, power_dbm))

    @property
    def powers(self) -> list[float]:
        return sorted({c.power_dbm for c in self.cells}, reverse=True)

    @property
    def delays(self) -> list[int]:
        return sorted({c.delay_ns for c in self.cells})

    def totals(self) -> dict[OutcomeClass, int]:
        return {o: sum(c.count(o) for c in self.cells) for o in OutcomeClass}

    def rate_by_power(self, outcome: OutcomeClass = OutcomeClass.MODEL_FAULT, *,
                      pooled: bool = False) -> dict[float, float]:
        """Per power, the best cell rate over delays, or the pooled rate over the
        delays whose forced outcome is `outcome` (any cell of it non-zero)."""
        out = {}
        if pooled:
            active = {c.delay_ns for c in self.cells if c.count(outcome)}
        for p in self.powers:
            cells = [c for c in self.cells if c.power_dbm == p]
            if pooled:
                cells = [c for c in cells if c.delay_ns in active]
                runs = sum(c.n_runs for c in cells)
                out[p] = sum(c.count(outcome) for c in cells) / runs if runs else 0.0
            else:
                out[p] = max(c.rate(outcome) for c in cells)
        return out

    def peak_power(self, outcome: OutcomeClass = OutcomeClass.MODEL_FAULT, *,
                   pooled: bool = True) -> float:
        rates = self.rate_by_power(outcome, pooled=pooled)
        return max(rates, key=lambda p: (rates[p], p))


def cell_rolls(seed: int, delay_index: int, power_index: int, reps: int, p: float) -> np.ndarray:
    """Per-repetition fault draws of one cell; draw r is repetition r."""
    if p <= 0.0:
        return np.zeros(reps, dtype=bool)
    if p >= 1.0:
        return np.ones(reps, dtype=bool)
    rng = np.random.default_rng(np.random.SeedSequence([seed, delay_index, power_index]))
    return rng.random(reps) < p


def _sweep_delays(campaign: Campaign, grid: SweepGrid, seed: int, indices: Sequence[int],
                  reuse: bool) -> list[CellCounts]:
    cells = []
    forced: dict[int, RunOutcome] = {}
    for d_idx in indices:
        delay = grid.delays_ns[d_idx]
        arm = campaign.arm_cycle(delay)
        if arm not in forced:
            forced[arm] = campaign.execute(arm, True)
        hit = forced[arm]
        for p_idx, power in enumerate(grid.powers_dbm):
            cell = CellCounts(delay, ns_to_cycles(delay), power)
            rolls = cell_rolls(seed, d_idx, p_idx, grid.reps, campaign.curve(power))
            if hit.result.fault_target is None:
                cell.add(OutcomeClass.NO_EFFECT, grid.reps)
            elif reuse:
                fired = int(rolls.sum())
                cell.add(hit.outcome, fired)
                cell.add(OutcomeClass.NORMAL, grid.reps - fired)
            else:
                for fire in rolls:
                    cell.add(campaign.execute(arm, bool(fire)).outcome)
            cells.append(cell)
    return cells


_WORKER: dict = {}


def _worker_init(args: tuple) -> None:
    program, config, kwargs = args
    _WORKER["campaign"] = Campaign(program, config, **kwargs)


def _worker_run(job: tuple) -> list[CellCounts]:
    grid, seed, indices, reuse = job
    return _sweep_delays(_WORKER["campaign"], grid, seed, indices, reuse)


def sweep(campaign: Campaign, grid: SweepGrid, seed: int = 0, *, jobs: int = 1,
          reuse: bool = True) -> CampaignReport:
    """Run reps x |delays| x |powers| pulses and count outcome classes per cell.

    Each (delay, power) cell draws its fault rolls from its own stream seeded
    by (seed, delay index, power index), so the report does not depend on
    `jobs`. With `reuse`, the faulted run of each arm cycle is simulated once
    and shared by every repetition that fires, which is exact because a run
    is fully determined by its arm cycle and roll.
    """
    n = len(grid.delays_ns)
    if jobs <= 1 or n == 1:
        cells = _sweep_delays(campaign, grid, seed, range(n), reuse)
    else:
        chunks = [list(range(i, n, jobs)) for i in range(jobs) if i < n]
        init = (campaign.program, campaign.config,
                dict(values=campaign.values, ram_init=campaign.ram_init,
                     functional_region=campaign.functional_region,
                     trigger=campaign.trigger_cycle, curve=campaign.curve,
                     backend=campaign.backend))
        with ProcessPoolExecutor(jobs, initializer=_worker_init, initargs=(init,)) as pool:
            parts = pool.map(_worker_run, [(grid, seed, c, reuse) for c in chunks])
            cells = [c for part in parts for c in part]
    order = {d: i for i, d in enumerate(grid.delays_ns)}
    porder = {p: i for i, p in enumerate(grid.powers_dbm)}
    cells.sort(key=lambda c: (order[c.delay_ns], porder[c.power_dbm]))
    meta = {
        "config": campaign.config.name,
        "curve": asdict(campaign.curve),
        "program_sha256": campaign.fingerprint(),
        "seed": seed,
        "reps": grid.reps,
        "trigger_cycle": campaign.trigger_cycle,
        "golden_cycles": campaign.golden.cycles,
    }
    return CampaignReport(cells, meta)


# -- report files ------------------------------------------------------------

def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def export_report(report: CampaignReport, path: str | Path, *, metadata: bool = True) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for cell in report.cells:
            writer.writerow(cell.row())
    if metadata:
        _sidecar(path).write_text(json.dumps(report.metadata, indent=2, sort_keys=True) + "\n")
    return path


def import_report(path: str | Path) -> CampaignReport:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        cells = []
        for row in reader:
            d, dc, p, *counts = row
            cells.append(CellCounts(int(d), int(dc), float(p), *map(int, counts)))
    meta = {}
    side = _sidecar(path)
    if side.exists():
        meta = json.loads(side.read_text())
    return CampaignReport(cells, meta)


# -- campaign config files ---------------------------------------------------

@dataclass
class CampaignConfig:
    """Parsed campaign configuration file (JSON).

    Keys: ``program`` (assembly path, relative to the file) or ``scenario``;
    ``config`` (name or {"i_cache": bool, "d_cache": bool}); ``grid``
    (SweepGrid.build keywords, ``delay_stop_ns`` defaults to the golden run
    length); ``curve`` (ResponseCurve fields); ``seed``; ``jobs``.
    """

    program: str | None = None
    scenario: str | None = None
    config: CacheConfig = field(default_factory=CacheConfig)
    grid: dict = field(default_factory=dict)
    curve: ResponseCurve | None = None
    seed: int = 0
    jobs: int = 1
    base_dir: Path = field(default_factory=Path)


def _parse_cache_config(value) -> CacheConfig:
    if isinstance(value, str):
        return CacheConfig.named(value)
    if isinstance(value, dict):
        return CacheConfig(bool(value.get("i_cache", True)), bool(value.get("d_cache", True)))
    raise ValueError(f"bad cache config {value!r}")


def load_campaign_config(path: str | Path) -> CampaignConfig:
    path = Path(path)
    data = json.loads(path.read_text())
    allowed = {"program", "scenario", "config", "grid", "curve", "seed", "jobs"}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown campaign keys: {', '.join(sorted(unknown))}")
    if ("program" in data) == ("scenario" in data):
        raise ValueError("campaign config needs exactly one of 'program' or 'scenario'")
    return CampaignConfig(
        program=data.get("program"),
        scenario=data.get("scenario"),
        config=_parse_cache_config(data.get("config", "all-on")),
        grid=dict(data.get("grid", {})),
        curve=curve_from_mapping(data["curve"]) if "curve" in data else None,
        seed=int(data.get("seed", 0)),
        jobs=int(data.get("jobs", 1)),
        base_dir=path.parent,
    )


def grid_for(campaign: Campaign, options: dict, reps: int | None = None) -> SweepGrid:
    opts = dict(options)
    if reps is not None:
        opts["reps"] = reps
    opts.setdefault("delay_stop_ns", cycles_to_ns(campaign.golden.cycles - campaign.trigger_cycle))
    opts.setdefault("power_start_dbm", 0.0 if campaign.config.caches_on else 4.0)
    return SweepGrid.build(**opts)


def outcome_counts(outcomes: Iterable[OutcomeClass]) -> dict[str, int]:
    counts = {o.value: 0 for o in OutcomeClass}
    for o in outcomes:
        counts[o.value] += 1
    return counts
