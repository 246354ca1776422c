"""Acceptance checks, one per criterion, each with its own tolerance and time limit.

Run under pytest (a PASS/FAIL summary is printed at the end of the session) or
directly with ``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import random
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import full_wide_lines, random_straight_line, reordered_execution, supported_space  # noqa: E402
from pfqsim import scenarios as S  # noqa: E402
from pfqsim.campaign import Campaign, OutcomeClass, SweepGrid, sweep  # noqa: E402
from pfqsim.faultengine import PEAK_ALL_ON_DBM, PEAK_OTHER_DBM, FaultPulse  # noqa: E402
from pfqsim.isa import MachineState, decode, encode_halfwords  # noqa: E402
from pfqsim.memhier import CacheConfig, FetchKind, cycles_to_ns  # noqa: E402
from pfqsim.simulator import Simulator  # noqa: E402

ALL_ON = CacheConfig(True, True)
ALL_OFF = CacheConfig(False, False)
RATE_TARGET, RATE_TOL = 0.96, 0.03
PEAK_TOL_DBM = 0.5


@dataclass
class Verdict:
    number: int
    title: str
    ok: bool
    detail: str
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"{status}  criterion {self.number}: {self.title}  [{self.detail}; {self.seconds:.2f}s]"


VERDICTS: dict[int, Verdict] = {}


def _timed(number: int, title: str, limit_s: float | None):
    def wrap(fn):
        def run() -> Verdict:
            t0 = time.perf_counter()
            ok, detail = fn()
            dt = time.perf_counter() - t0
            if limit_s is not None and dt >= limit_s:
                ok, detail = False, f"{detail}; over the {limit_s:g}s limit"
            verdict = Verdict(number, title, ok, detail, dt)
            VERDICTS[number] = verdict
            return verdict
        run.number = number
        return run
    return wrap


# -- 1: replay semantics on the aligned add sequence ------------------------------

@_timed(1, "aligned add sequence replay", 1.0)
def criterion_1():
    sc = S.scenario_add_sequence(0)
    run = S.run_scenario(sc, ALL_ON)
    trace = sc.case_trace(run.outcome)
    regs = run.regs
    want = {2: 2, 4: 7, 5: 2, 6: 2, 7: 0, 8: 0, 9: 0, 10: 0, 11: 1}
    bad = {r: regs[r] for r, v in want.items() if regs[r] != v}
    ok = trace == [1, 2, 3, 4, 1, 2, 3, 4, 9, 10] and not bad
    return ok, f"trace {' '.join(f'i{k}' for k in trace)}; register mismatches {bad or 'none'}"


# -- 2: alignment classes ----------------------------------------------------------

@_timed(2, "alignment class windows", None)
def criterion_2():
    want = {0: ((1, 2, 3, 4), (5, 6, 7, 8)), 1: ((2, 3, 4, 5), (6, 7, 8, 9))}
    got = {}
    for cls in (0, 1):
        sc = S.scenario_add_sequence(cls)
        got[cls] = sc.windows(S.run_scenario(sc, ALL_ON).outcome)
    parts = [f"class {c}: replay {got[c][0]} skip {got[c][1]}" for c in (0, 1)]
    return got == want, "; ".join(parts)


# -- 3: fault simulation vs explicit reordering -------------------------------------

@_timed(3, "oracle equivalence on 200 random programs", 30.0)
def criterion_3(n_programs: int = 200, seed: int = 2024):
    rng = random.Random(seed)
    mismatches = 0
    for _ in range(n_programs):
        _, program = random_straight_line(rng, rng.randint(8, 32))
        line = rng.choice(full_wide_lines(program))
        values = {12: 0x2000_0000}
        camp = Campaign(program, ALL_ON, values=values)
        out = camp.run_one(FaultPulse(camp.delay_for_line(line), 0.0), force=True)
        ref = reordered_execution(program, line, MachineState.initial(
            program.base_address, values=values, rom=program.padded_image()))
        same = (out.final_state.regs[:15] == tuple(ref.regs[:15])
                and out.final_state.ram == bytes(ref.ram))
        mismatches += not same
    return mismatches == 0, f"{mismatches} mismatches over {n_programs} programs"


# -- 4: statistical fidelity ---------------------------------------------------------

def _peak_cell_rate(config: CacheConfig, power: float, reps: int = 500, seed: int = 0) -> float:
    camp = S.scenario_add_sequence(0).campaign(config)
    grid = SweepGrid((camp.delay_for_line(camp.program.line_address(2)),), (power,), reps)
    return sweep(camp, grid, seed).cells[0].rate(OutcomeClass.MODEL_FAULT)


def _peak_power(config: CacheConfig, power_start: float, seed: int = 0) -> float:
    camp = S.scenario_add_sequence(0).campaign(config)
    grid = SweepGrid.build(delay_stop_ns=cycles_to_ns(camp.golden.cycles),
                           power_start_dbm=power_start, power_stop_dbm=-5.0,
                           power_step_dbm=0.5, reps=500)
    return sweep(camp, grid, seed).peak_power(pooled=True)


@_timed(4, "ModelFault rate and peak location", 120.0)
def criterion_4():
    rate_on = _peak_cell_rate(ALL_ON, PEAK_ALL_ON_DBM)
    rate_off = _peak_cell_rate(ALL_OFF, PEAK_OTHER_DBM)
    peak_on = _peak_power(ALL_ON, 0.0)
    peak_off = _peak_power(ALL_OFF, 9.0)
    ok = (abs(rate_on - RATE_TARGET) <= RATE_TOL and abs(rate_off - RATE_TARGET) <= RATE_TOL
          and abs(peak_on - PEAK_ALL_ON_DBM) <= PEAK_TOL_DBM
          and abs(peak_off - PEAK_OTHER_DBM) <= PEAK_TOL_DBM)
    return ok, (f"rate {rate_on:.3f} (on) {rate_off:.3f} (off); "
                f"peak {peak_on:g} dBm (on) {peak_off:g} dBm (off)")


# -- 5: timing model ------------------------------------------------------------------

@_timed(5, "flash wait states and I-cache reuse", None)
def criterion_5():
    sc = S.scenario_add_sequence(0)
    sim = Simulator(sc.program, ALL_OFF)
    golden = sim.run(sim.initial_state())
    expected = len(golden.trace) + 6 * golden.flash_refills
    timing_ok = golden.state.cycles == expected

    loop = S.scenario_icache_loop()
    sim = Simulator(loop.program, ALL_ON)
    res = sim.run(sim.initial_state())
    second = [t.cycle for t in res.trace if t.pc == loop.program.symbols["pass"]][1]
    late = [e for e in res.events
            if e.cycle >= second and e.kind is FetchKind.REFILL_FROM_FLASH
            and e.line_base < loop.program.symbols["exit"]]
    return timing_ok and not late, (
        f"{golden.state.cycles} cycles = {len(golden.trace)} + 6 x {golden.flash_refills}"
        f" (want {expected}); second-pass flash refills {len(late)}")


# -- 6: decoder round trip --------------------------------------------------------

@_timed(6, "decode(encode(x)) == x", 10.0)
def criterion_6():
    total = failures = 0
    for instr in supported_space():
        total += 1
        failures += decode(encode_halfwords(instr)) != instr
    return failures == 0, f"{total - failures}/{total} round-trip"


# -- 7: scenario outcomes ------------------------------------------------------------

@_timed(7, "unmask, loop replay and skip countermeasure", None)
def criterion_7():
    unmasked = S.unmasked_registers(S.run_scenario(S.scenario_unmask()).regs)

    loop = S.run_scenario(S.scenario_loop_replay())
    n = S.iteration_count(loop.campaign.golden.final_state.ram)
    faulted_n = S.iteration_count(loop.outcome.result.state)

    sc = S.scenario_skip_countermeasure(True)
    camp = sc.campaign()
    golden = camp.golden.final_state
    skips_hold = all(S.single_skip(sc, k)[0].snapshot() == golden
                     for k in range(len(camp.golden.trace) - 1))
    stall_breaks = S.run_scenario(sc).outcome.final_state != golden

    ok = (len(unmasked) >= 2 and n == S.LOOP_ROUNDS and faulted_n >= n + 1
          and skips_hold and stall_breaks)
    return ok, (f"unmasked {len(unmasked)}/4; loop {n} -> {faulted_n}; "
                f"single skips golden {skips_hold}; stall corrupts {stall_breaks}")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7]


@pytest.fixture(scope="module", autouse=True)
def _summary(request):
    yield
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")
    if reporter is None:
        return
    reporter.write_line("")
    for number in sorted(VERDICTS):
        reporter.write_line(VERDICTS[number].line())


@pytest.mark.parametrize("check", CRITERIA, ids=lambda c: f"criterion_{c.number}")
def test_acceptance(check):
    verdict = check()
    assert verdict.ok, verdict.line()


if __name__ == "__main__":
    results = [check() for check in CRITERIA]
    for v in results:
        print(v.line())
    sys.exit(0 if all(v.ok for v in results) else 1)
