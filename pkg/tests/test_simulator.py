import random

import pytest

from pfqsim import scenarios
from pfqsim.isa import MachineState, assemble_text
from pfqsim.memhier import CacheConfig, FetchKind
from pfqsim.scenarios import interpret
from pfqsim.simulator import Simulator, Status, available_backends

from oracles import random_straight_line

BASE = 0x0800_0000
CONFIGS = [CacheConfig(True, True), CacheConfig(False, False)]


def _run(program, backend, config=CacheConfig(), arm=None, fire=True, values=None, **kw):
    sim = Simulator(program, config, backend=backend)
    if arm is not None:
        sim = sim.arm(arm, fire)
    return sim.run(sim.initial_state(values), **kw)


def test_golden_add_sequence(add_source, backend):
    result = _run(assemble_text(add_source), backend)
    assert result.status is Status.HALTED
    regs = result.state.regs
    assert (regs[2], regs[4]) == (1, 6) and regs[5:12] == [1] * 7
    assert [e.cycle for e in result.events] == [0, 10, 20]
    assert result.state.cycles == 11 + 6 * 3


def test_forced_stall_replays_previous_line(add_source, backend):
    program = assemble_text(add_source)
    result = _run(program, backend, arm=5)
    assert result.fault_fired and result.fault_target.line_base == BASE + 16
    assert result.ordinals(program) == [1, 2, 3, 4, 1, 2, 3, 4, 9, 10, 11]
    assert [t.replayed for t in result.trace].count(True) == 4


def test_unfired_arm_is_golden(add_source, backend):
    program = assemble_text(add_source)
    golden = _run(program, backend)
    armed = _run(program, backend, arm=5, fire=False)
    assert armed.snapshot() == golden.snapshot()
    assert armed.trace == golden.trace
    assert armed.fault_target is not None and not armed.fault_target.suppressed


def test_first_refill_fault_is_a_crash(add_source, backend):
    result = _run(assemble_text(add_source), backend, arm=0)
    assert result.status is Status.STALE_PREFETCH and result.crashed


def test_arm_past_end_has_no_target(add_source, backend):
    result = _run(assemble_text(add_source), backend, arm=1000)
    assert result.fault_target is None and result.status is Status.HALTED


def test_running_off_the_image_crashes(backend):
    result = _run(assemble_text("nop.w\nnop.w\n.word 0xffffffff\n"), backend)
    assert result.status is Status.DECODE_FAULT
    result = _run(assemble_text("nop.w\nnop.w\nnop.w\nnop.w\n"), backend)
    assert result.status is Status.OUT_OF_IMAGE


def test_budget(backend):
    result = _run(assemble_text("loop: b loop\n"), backend, max_cycles=50)
    assert result.status is Status.BUDGET and result.state.cycles >= 50


def test_memory_fault(backend):
    result = _run(assemble_text("mov.w r1, #0x40000000\nldr.w r0, [r1]\nbkpt #0\n"), backend)
    assert result.status is Status.MEMORY_FAULT and result.fault_address == 0x4000_0000


def test_run_leaves_input_state_untouched(add_source, backend):
    program = assemble_text(add_source)
    sim = Simulator(program, backend=backend)
    state = sim.initial_state({2: 5})
    before = state.snapshot()
    sim.run(state)
    assert state.snapshot() == before


def test_icache_two_pass_loop(backend):
    sc = scenarios.scenario_icache_loop()
    on = _run(sc.program, backend, CacheConfig(True, True))
    off = _run(sc.program, backend, CacheConfig(False, False))
    second_pass = [t.cycle for t in on.trace if t.pc == sc.program.symbols["pass"]][1]
    assert not [e for e in on.events if e.cycle >= second_pass
                and e.kind is FetchKind.REFILL_FROM_FLASH and e.line_base < BASE + 64]
    assert on.state.cycles < off.state.cycles


def test_matches_fetch_free_interpreter():
    rng = random.Random(7)
    for _ in range(30):
        _, program = random_straight_line(rng)
        for backend in available_backends():
            res = _run(program, backend, values={12: 0x2000_0000})
            ref, status = interpret(program, MachineState.initial(
                BASE, values={12: 0x2000_0000}, rom=program.padded_image()))
            assert status == "HALTED"
            assert res.snapshot() == ref.snapshot()


@pytest.mark.skipif(len(available_backends()) < 2, reason="compiled kernel not built")
def test_backend_parity_random_faults():
    rng = random.Random(42)
    programs = [random_straight_line(rng)[1] for _ in range(40)]
    programs += [scenarios.get(n).program for n in scenarios.names()]
    for program in programs:
        for config in CONFIGS:
            golden = _run(program, "python", config, values={12: 0x2000_0000})
            for arm in range(0, golden.state.cycles + 2, 3):
                for fire in (True, False):
                    runs = [_run(program, b, config, arm, fire, values={12: 0x2000_0000},
                                 max_cycles=2000) for b in ("python", "cython")]
                    a, b = runs
                    assert a.status == b.status
                    assert a.snapshot() == b.snapshot()
                    assert a.state.cycles == b.state.cycles
                    assert a.trace == b.trace and a.events == b.events
                    assert a.fault_target == b.fault_target
