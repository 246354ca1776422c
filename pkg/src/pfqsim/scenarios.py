"""Test codes and attack demonstrations as runnable fixtures.

Every fixture is line-aligned so that the deterministic fault on
`fault_line` produces a known replay/skip window.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .campaign import Campaign, OutcomeClass, RunOutcome, replay_window
from .faultengine import FaultPulse
from .isa.assembler import DEFAULT_BASE, LINE_BYTES, Program, assemble_text
from .isa.encoding import DecodeError
from .isa.machine import DEFAULT_RAM_BASE, MachineState, MemoryFault, execute_step
from .memhier import CacheConfig

__all__ = [
    "SCENARIOS",
    "Scenario",
    "ScenarioRun",
    "get",
    "iteration_count",
    "names",
    "run_scenario",
    "scenario_add_sequence",
    "scenario_icache_loop",
    "scenario_loop_replay",
    "scenario_skip_countermeasure",
    "scenario_unmask",
    "single_skip",
    "unmasked_registers",
]

ADD_SEQUENCE = """\
i1:  add.w r2, r2, #1
i2:  add.w r4, r4, #1
i3:  add.w r5, r5, #1
i4:  add.w r6, r6, #1
i5:  add.w r7, r7, #1
i6:  add.w r8, r8, #1
i7:  add.w r9, r9, #1
i8:  add.w r10, r10, #1
i9:  add.w r11, r11, #1
i10: add.w r4, r4, #5
"""


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    source: str
    program: Program
    fault_line: int
    fault_occurrence: int = 1
    values: dict[int, int] = field(default_factory=dict)
    ram_init: dict[int, bytes] = field(default_factory=dict)
    numbered: tuple[int, ...] = ()
    expected_golden: dict[int, int] = field(default_factory=dict)
    expected_replayed: tuple[int, ...] = ()
    expected_skipped: tuple[int, ...] = ()
    functional_region: tuple[int, int] | None = None

    def campaign(self, config: CacheConfig = CacheConfig(), **kwargs) -> Campaign:
        return Campaign(self.program, config, values=self.values, ram_init=self.ram_init,
                        functional_region=self.functional_region, **kwargs)

    def fault_delay_ns(self, campaign: Campaign) -> int:
        return campaign.delay_for_line(self.fault_line, self.fault_occurrence)

    def case_ordinal(self, address: int | None) -> int | None:
        """Index in the numbered instructions (i1 = 1), else the program ordinal."""
        if address is None:
            return None
        if self.numbered:
            try:
                return self.numbered.index(address) + 1
            except ValueError:
                return None
        return self.program.ordinal_of(address)

    def case_trace(self, outcome: RunOutcome) -> list[int]:
        """Executed numbered instructions, in order (padding and halt omitted)."""
        out = []
        for t in outcome.result.trace:
            k = self.case_ordinal(t.source)
            if k is not None:
                out.append(k)
        return out

    def windows(self, outcome: RunOutcome) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """(replayed, skipped) case ordinals observed in a faulted run."""
        result = outcome.result
        window = replay_window(self.program, result)
        if window is None or result.fault_target is None:
            return (), ()
        start, end = window
        replayed = tuple(k for t in result.trace[start:end]
                         if (k := self.case_ordinal(t.source)) is not None)
        line = result.fault_target.line_base
        skipped = tuple(k for t in result.trace[start:end]
                        if t.pc & ~(LINE_BYTES - 1) == line
                        and (k := self.case_ordinal(t.pc)) is not None)
        return replayed, skipped


@dataclass(frozen=True)
class ScenarioRun:
    scenario: Scenario
    campaign: Campaign
    delay_ns: int
    outcome: RunOutcome

    @property
    def golden_regs(self) -> tuple[int, ...]:
        return self.campaign.golden.final_state.regs

    @property
    def regs(self) -> tuple[int, ...]:
        return self.outcome.final_state.regs


def run_scenario(scenario: Scenario, config: CacheConfig = CacheConfig(), *,
                 force: bool = True, power_dbm: float | None = None, seed: int = 0,
                 delay_ns: int | None = None, backend: str | None = None) -> ScenarioRun:
    camp = scenario.campaign(config, backend=backend)
    if delay_ns is None:
        delay_ns = scenario.fault_delay_ns(camp)
    if power_dbm is None:
        power_dbm = camp.curve.peak_power_dbm
    outcome = camp.run_one(FaultPulse(delay_ns, power_dbm, seed), force=force)
    return ScenarioRun(scenario, camp, delay_ns, outcome)


def _build(name: str, description: str, source: str, fault_line_number: int, *,
           defines: dict[str, int] | None = None, **kwargs) -> Scenario:
    program = assemble_text(source, DEFAULT_BASE, defines)
    return Scenario(name, description, source, program, program.line_address(fault_line_number),
                    **kwargs)


# -- add sequence ------------------------------------------------------------

def scenario_add_sequence(alignment_class: int = 0) -> Scenario:
    """Ten dependent-free adds; class 1 pads with three nop.w so i2 starts a line."""
    if alignment_class not in (0, 1):
        raise ValueError("alignment_class must be 0 or 1")
    pad = "    .nop32 3\n" if alignment_class else ""
    source = pad + ADD_SEQUENCE + "    bkpt #0\n"
    program = assemble_text(source)
    numbered = tuple(program.symbols[f"i{k}"] for k in range(1, 11))
    first = 1 + alignment_class
    return Scenario(
        f"add-sequence-{alignment_class}",
        f"ADD sequence, alignment class {alignment_class}",
        source,
        program,
        program.line_address(3 if alignment_class else 2),
        numbered=numbered,
        expected_golden={2: 1, 4: 6, 5: 1, 6: 1, 7: 1, 8: 1, 9: 1, 10: 1, 11: 1},
        expected_replayed=tuple(range(first, first + 4)),
        expected_skipped=tuple(range(first + 4, first + 8)),
    )


# -- mask cancellation -------------------------------------------------------

MASK_ADDR = DEFAULT_RAM_BASE
UNMASK_STATE = (0x3243F6A8, 0x885A308D, 0x313198A2, 0xE0370734)
UNMASK_MASKS = (0x2B7E1516, 0x28AED2A6, 0xABF71588, 0x09CF4F3C)

UNMASK_SOURCE = """\
    mov.w r5, #m
    .nop32 3
    ldr.w r0, [r5]
    eor.w r1, r1, r0
    ldr.w r0, [r5, #4]
    eor.w r2, r2, r0
    ldr.w r0, [r5, #8]
    eor.w r3, r3, r0
    ldr.w r0, [r5, #12]
    eor.w r4, r4, r0
    bkpt #0
"""


def scenario_unmask() -> Scenario:
    """Mask words at m applied to r1..r4 by ldr/eor pairs spanning two lines.

    Stalling the second line replays the first two pairs (re-xoring r1, r2
    with their masks) and skips the last two (r3, r4 never masked).
    """
    masks = b"".join(w.to_bytes(4, "little") for w in UNMASK_MASKS)
    return _build(
        "unmask", "mask application cancelled by one replay/skip", UNMASK_SOURCE, 3,
        defines={"m": MASK_ADDR},
        values={r: v for r, v in zip((1, 2, 3, 4), UNMASK_STATE)},
        ram_init={MASK_ADDR: masks},
        expected_golden={r: x ^ k for r, x, k in zip((1, 2, 3, 4), UNMASK_STATE, UNMASK_MASKS)},
        functional_region=(MASK_ADDR, 16),
    )


def unmasked_registers(state_regs) -> list[int]:
    """State registers (of r1..r4) holding their pre-mask value."""
    return [r for r, x in zip((1, 2, 3, 4), UNMASK_STATE) if state_regs[r] == x]


# -- round counter replay ----------------------------------------------------

LOOP_COUNT_ADDR = DEFAULT_RAM_BASE
LOOP_ROUNDS = 3

LOOP_SOURCE = """\
    mov.w r6, #count
    mov.w r0, #0
    .nop32 2
loop:
    ldr.w r3, [r6]          ; log one pass of the round body
    add.w r3, r3, #1
    str.w r3, [r6]
    nop.w
    add.w r0, r0, #1        ; round counter increment
    .nop32 3
    cmp.w r0, #rounds
    bne.w loop
    .nop32 2
    bkpt #0
"""


def scenario_loop_replay(rounds: int = LOOP_ROUNDS) -> Scenario:
    """Counted loop; stalling the increment line replays the body and skips the increment."""
    return _build(
        "loop-replay", "round counter increment skipped, round body replayed", LOOP_SOURCE, 3,
        defines={"count": LOOP_COUNT_ADDR, "rounds": rounds},
        expected_golden={0: rounds},
        functional_region=(LOOP_COUNT_ADDR, 4),
    )


def iteration_count(state: MachineState | bytes) -> int:
    """Round-body passes logged in RAM by the loop-replay fixture."""
    ram = state.ram if isinstance(state, MachineState) else state
    off = LOOP_COUNT_ADDR - DEFAULT_RAM_BASE
    return int.from_bytes(ram[off:off + 4], "little")


# -- skip countermeasure -----------------------------------------------------

SETUP = """\
    mov.w r3, #5
    mov.w r4, #7
    .nop32 2
"""

PROTECTED_SOURCE = """\
    mov.w r3, #5
    mov.w r3, #5
    mov.w r4, #7
    mov.w r4, #7
    add.w r1, r3, #1
    add.w r1, r3, #1
    add.w r2, r4, #2
    add.w r2, r4, #2
    eor.w r5, r1, r2
    eor.w r5, r1, r2
    add.w r6, r5, #3
    add.w r6, r5, #3
    bkpt #0
"""

UNPROTECTED_SOURCE = """\
    mov.w r3, #5
    mov.w r3, #5
    mov.w r4, #7
    mov.w r4, #7
    add.w r1, r3, #1
    add.w r2, r4, #2
    eor.w r5, r1, r2
    add.w r6, r5, #3
    bkpt #0
"""


def scenario_skip_countermeasure(protected: bool = True) -> Scenario:
    """Instruction-duplication countermeasure against single skips, and its unprotected control."""
    golden = {1: 6, 2: 9, 3: 5, 4: 7, 5: 6 ^ 9, 6: (6 ^ 9) + 3}
    if protected:
        return _build("skip-countermeasure", "duplicated idempotent instructions",
                      PROTECTED_SOURCE, 3, expected_golden=golden)
    return _build("skip-countermeasure-unprotected", "single-copy control for the countermeasure",
                  UNPROTECTED_SOURCE, 2, expected_golden=golden)


def interpret(program: Program, state: MachineState, *, skip: int | None = None,
              max_steps: int = 100_000) -> tuple[MachineState, str]:
    """Fetch-free execution straight from the image; dynamic instruction `skip`
    (0-based) is not executed. Returns (state, status)."""
    for step in range(max_steps):
        pc = state.pc
        hws = program.halfwords_at(pc)
        if not hws:
            return state, "OUT_OF_IMAGE"
        try:
            instr = program.instruction_at(pc)
        except DecodeError:
            return state, "DECODE_FAULT"
        if step == skip:
            state.pc = pc + instr.size
            state.cycles += 1
            continue
        try:
            execute_step(state, instr)
        except MemoryFault:
            return state, "MEMORY_FAULT"
        if state.halted:
            return state, "HALTED"
    return state, "BUDGET"


def single_skip(scenario: Scenario, index: int) -> tuple[MachineState, str]:
    """Reference single-instruction-skip injector (contrast for the countermeasure)."""
    state = MachineState.initial(scenario.program.base_address, values=scenario.values,
                                 ram_init=scenario.ram_init, rom=scenario.program.padded_image(),
                                 rom_base=scenario.program.base_address)
    return interpret(scenario.program, state, skip=index)


# -- I-cache timing loop -----------------------------------------------------

ICACHE_LOOP_SOURCE = """\
    mov.w r0, #2
    .nop32 3
pass:
    add.w r1, r1, #1
    add.w r2, r2, #1
    add.w r3, r3, #1
    add.w r4, r4, #1
    add.w r5, r5, #1
    add.w r6, r6, #1
    sub.w r0, r0, #1
    cmp.w r0, #0
    bne.w pass
exit:
    .nop32 3
    bkpt #0
"""


def scenario_icache_loop() -> Scenario:
    """Two passes over a three-line body; the second pass should hit the I-cache."""
    return _build("icache-loop", "two-pass loop for I-cache timing", ICACHE_LOOP_SOURCE, 3,
                  expected_golden={0: 0, 1: 2, 2: 2, 3: 2, 4: 2, 5: 2, 6: 2})


SCENARIOS: dict[str, Callable[[], Scenario]] = {
    "add-sequence-0": lambda: scenario_add_sequence(0),
    "add-sequence-1": lambda: scenario_add_sequence(1),
    "unmask": scenario_unmask,
    "loop-replay": scenario_loop_replay,
    "skip-countermeasure": lambda: scenario_skip_countermeasure(True),
    "skip-countermeasure-unprotected": lambda: scenario_skip_countermeasure(False),
    "icache-loop": scenario_icache_loop,
}


def names() -> list[str]:
    return list(SCENARIOS)


def get(name: str) -> Scenario:
    try:
        return SCENARIOS[name]()
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}") from None


def summarize(run: ScenarioRun) -> list[str]:
    """Human-readable lines describing a scenario run against its expectation."""
    sc, out = run.scenario, run.outcome
    lines = [f"scenario: {sc.name} ({sc.description})",
             f"delay_ns: {run.delay_ns}  fired: {out.fired}  outcome: {out.outcome.value}"]
    if out.outcome is OutcomeClass.MODEL_FAULT:
        rep, skip = sc.windows(out)
        lines.append(f"replayed: {_span(rep)}  skipped: {_span(skip)}")
    if sc.name == "unmask":
        lines.append(f"unmasked registers: {unmasked_registers(run.regs)}")
    if sc.name == "loop-replay":
        lines.append(f"iterations: golden {iteration_count(run.campaign.golden.final_state.ram)}"
                     f"  faulted {iteration_count(out.result.state)}")
    if sc.name.startswith("skip-countermeasure"):
        lines.append("state equals golden: "
                     f"{out.final_state == run.campaign.golden.final_state}")
    return lines


def _span(ordinals) -> str:
    if not ordinals:
        return "-"
    if list(ordinals) == list(range(ordinals[0], ordinals[0] + len(ordinals))):
        return f"i{ordinals[0]}-i{ordinals[-1]}" if len(ordinals) > 1 else f"i{ordinals[0]}"
    return ",".join(f"i{k}" for k in ordinals)
