"""Reference run loop built from the isa and memhier objects.

Same signature and result tuple as the compiled ``_ckernel.run_kernel``;
used when the extension is unavailable and as the parity baseline.
"""

from __future__ import annotations

from .isa.assembler import Program
from .isa.encoding import DecodeError, decode, is_32bit_prefix
from .isa.machine import MachineState, MemoryFault, execute_step
from .memhier import CacheConfig, FetchPath, OutOfImage, StalePrefetch

HALTED, DECODE_FAULT, MEMORY_FAULT, OUT_OF_IMAGE, STALE_PREFETCH, BUDGET = range(6)

BACKEND = "python"


def run_kernel(image, base, regs, apsr, cycles, ram, ram_base, icache, arm_cycle, fire,
               max_cycles, record):
    state = MachineState(list(regs), apsr, cycles, ram, ram_base, rom=bytes(image), rom_base=base)
    path = FetchPath(Program(base, bytes(image)), CacheConfig(bool(icache), False))
    if arm_cycle >= 0:
        path.arm(arm_cycle, bool(fire))
    trace = []
    status = HALTED
    fault_addr = 0
    while True:
        if state.cycles >= max_cycles:
            status = BUDGET
            break
        pc = state.regs[15]
        start = state.cycles
        try:
            hw1, _, wait = path.fetch_halfword(pc, state.cycles)
            state.cycles += wait
            src = path.source_of(pc)
            if is_32bit_prefix(hw1):
                hw2, _, wait = path.fetch_halfword(pc + 2, state.cycles)
                state.cycles += wait
                instr = decode((hw1, hw2), pc)
            else:
                instr = decode((hw1,), pc)
            if record:
                trace.append((pc, src, start))
            execute_step(state, instr)
        except OutOfImage as exc:
            status, fault_addr = OUT_OF_IMAGE, exc.address
            break
        except StalePrefetch as exc:
            status, fault_addr = STALE_PREFETCH, exc.address
            break
        except DecodeError:
            status, fault_addr = DECODE_FAULT, pc
            break
        except MemoryFault as exc:
            status, fault_addr = MEMORY_FAULT, exc.address
            break
        if state.halted:
            break
    events = [(ev.kind.value, ev.line_base, ev.cycle, ev.sequence_index, ev.suppressed)
              for ev in path.events]
    tgt = path.fault_target
    target = None if tgt is None else (tgt.kind.value, tgt.line_base, tgt.cycle,
                                       tgt.sequence_index, tgt.suppressed)
    return (status, state.regs, state.apsr, state.cycles, state.halted, trace, events,
            target, fault_addr)
