"""Whole-program execution over the fetch path, with optional fault arming.

The run loop lives in a compiled extension (``pfqsim._ckernel``) when it was
built, otherwise in the pure-Python reference (``pfqsim._pykernel``). Set
``PFQSIM_BACKEND=python`` to force the reference loop.
"""

from __future__ import annotations

import enum
import importlib
import os
from dataclasses import dataclass, field
from types import ModuleType

from .isa.assembler import Program
from .isa.machine import ArchSnapshot, MachineState
from .memhier import CacheConfig, FetchEvent, FetchKind

__all__ = [
    "BACKEND",
    "DEFAULT_MAX_CYCLES",
    "RunResult",
    "Simulator",
    "Status",
    "TraceEntry",
    "available_backends",
    "get_kernel",
]

DEFAULT_MAX_CYCLES = 1_000_000


def _load(name: str) -> ModuleType:
    return importlib.import_module(f"pfqsim.{name}")


def available_backends() -> list[str]:
    names = ["python"]
    try:
        _load("_ckernel")
    except ImportError:
        pass
    else:
        names.insert(0, "cython")
    return names


def get_kernel(backend: str | None = None) -> ModuleType:
    """Kernel module for `backend` ("cython", "python" or None for the default)."""
    if backend is None:
        backend = BACKEND
    if backend == "cython":
        return _load("_ckernel")
    if backend == "python":
        return _load("_pykernel")
    raise ValueError(f"unknown backend {backend!r}")


def _default_backend() -> str:
    forced = os.environ.get("PFQSIM_BACKEND")
    if forced:
        return forced
    return available_backends()[0]


BACKEND = _default_backend()


class Status(enum.IntEnum):
    HALTED = 0
    DECODE_FAULT = 1
    MEMORY_FAULT = 2
    OUT_OF_IMAGE = 3
    STALE_PREFETCH = 4
    BUDGET = 5

    @property
    def crashed(self) -> bool:
        return self is not Status.HALTED


@dataclass(frozen=True)
class TraceEntry:
    pc: int
    source: int
    cycle: int

    @property
    def replayed(self) -> bool:
        """True when the bytes executed came from a different address than pc."""
        return self.pc != self.source


@dataclass
class RunResult:
    status: Status
    state: MachineState
    trace: list[TraceEntry]
    events: list[FetchEvent]
    fault_target: FetchEvent | None = None
    fault_address: int = 0
    backend: str = field(default="", compare=False)

    @property
    def crashed(self) -> bool:
        return self.status.crashed

    @property
    def fault_fired(self) -> bool:
        return self.fault_target is not None and self.fault_target.suppressed

    def snapshot(self) -> ArchSnapshot:
        return self.state.snapshot()

    def ordinals(self, program: Program) -> list[int | None]:
        """Executed instructions as 1-based program ordinals of their source bytes."""
        return [program.ordinal_of(t.source) for t in self.trace]

    @property
    def flash_refills(self) -> int:
        return sum(1 for e in self.events if e.kind is FetchKind.REFILL_FROM_FLASH)


def _event(t: tuple) -> FetchEvent:
    return FetchEvent(FetchKind(t[0]), t[1], t[2], t[3], bool(t[4]))


class Simulator:
    """Runs a Program on the modelled core.

    A Simulator is immutable; ``arm`` returns a new one carrying the fault.
    """

    def __init__(self, program: Program, config: CacheConfig = CacheConfig(), *,
                 backend: str | None = None, arm_cycle: int | None = None, fire: bool = True):
        self.program = program
        self.config = config
        self.backend = backend or BACKEND
        self.kernel = get_kernel(self.backend)
        self.arm_cycle = arm_cycle
        self.fire = fire
        self._image = program.padded_image()

    def arm(self, cycle: int, fire: bool = True) -> "Simulator":
        if cycle < 0:
            raise ValueError("arm cycle must be non-negative")
        return Simulator(self.program, self.config, backend=self.backend, arm_cycle=cycle, fire=fire)

    def disarmed(self) -> "Simulator":
        return Simulator(self.program, self.config, backend=self.backend)

    @property
    def armed(self) -> bool:
        return self.arm_cycle is not None

    def initial_state(self, values: dict[int, int] | None = None,
                      ram_init: dict[int, bytes] | None = None, **kwargs) -> MachineState:
        return MachineState.initial(self.program.base_address, values=values, ram_init=ram_init,
                                    rom=self._image, rom_base=self.program.base_address, **kwargs)

    def run(self, state: MachineState | None = None, *, max_cycles: int = DEFAULT_MAX_CYCLES,
            record: bool = True) -> RunResult:
        """Run from `state` (left untouched) until BKPT, a crash or the cycle budget."""
        if state is None:
            state = self.initial_state()
        ram = bytearray(state.ram)
        out = self.kernel.run_kernel(
            self._image, self.program.base_address, state.regs, state.apsr, state.cycles,
            ram, state.ram_base, self.config.i_cache_enabled,
            -1 if self.arm_cycle is None else self.arm_cycle, self.fire, max_cycles, record)
        status, regs, apsr, cycles, halted, trace, events, target, fault_addr = out
        final = MachineState(list(regs), apsr, cycles, ram, state.ram_base,
                             state.rom or self._image, state.rom_base, bool(halted))
        return RunResult(
            Status(status), final,
            [TraceEntry(*t) for t in trace],
            [_event(e) for e in events],
            None if target is None else _event(target),
            fault_addr,
            self.kernel.BACKEND,
        )
