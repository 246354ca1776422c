"""Architectural state and single-instruction execution."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .encoding import Instruction, condition_of

__all__ = [
    "ArchSnapshot",
    "DEFAULT_RAM_BASE",
    "DEFAULT_RAM_SIZE",
    "MachineState",
    "MemoryFault",
    "condition_passed",
    "execute_step",
    "run_sequence",
]

MASK32 = 0xFFFFFFFF
DEFAULT_RAM_BASE = 0x2000_0000
DEFAULT_RAM_SIZE = 0x1000

N_BIT, Z_BIT, C_BIT, V_BIT = 31, 30, 29, 28


class MemoryFault(Exception):
    def __init__(self, address: int, reason: str = "access outside mapped memory"):
        self.address = address
        super().__init__(f"{reason} at {address:#010x}")


@dataclass(frozen=True)
class ArchSnapshot:
    """Comparable view of the observable state of a finished run."""

    regs: tuple[int, ...]
    apsr: int
    ram: bytes
    halted: bool


@dataclass
class MachineState:
    """Register file, flags, cycle counter and data memory.

    `rom` is a read-only view of the flash image so that loads from code
    space work; stores there raise MemoryFault.
    """

    regs: list[int] = field(default_factory=lambda: [0] * 16)
    apsr: int = 0
    cycles: int = 0
    ram: bytearray = field(default_factory=lambda: bytearray(DEFAULT_RAM_SIZE))
    ram_base: int = DEFAULT_RAM_BASE
    rom: bytes = b""
    rom_base: int = 0x0800_0000
    halted: bool = False

    def __post_init__(self):
        if len(self.regs) != 16:
            raise ValueError("register file must hold 16 registers")
        self.regs = [r & MASK32 for r in self.regs]

    @classmethod
    def initial(cls, pc: int, *, values: dict[int, int] | None = None,
                ram_size: int = DEFAULT_RAM_SIZE, ram_base: int = DEFAULT_RAM_BASE,
                rom: bytes = b"", rom_base: int = 0x0800_0000,
                ram_init: dict[int, bytes] | None = None) -> "MachineState":
        """Reset state: zero registers, sp at the top of RAM, pc at `pc`."""
        state = cls(ram=bytearray(ram_size), ram_base=ram_base, rom=rom, rom_base=rom_base)
        state.regs[13] = (ram_base + ram_size) & MASK32
        state.regs[15] = pc & MASK32
        for reg, value in (values or {}).items():
            state.regs[reg] = value & MASK32
        for addr, blob in (ram_init or {}).items():
            off = addr - ram_base
            if off < 0 or off + len(blob) > ram_size:
                raise MemoryFault(addr, "initial RAM contents outside RAM")
            state.ram[off:off + len(blob)] = blob
        return state

    @property
    def pc(self) -> int:
        return self.regs[15]

    @pc.setter
    def pc(self, value: int) -> None:
        self.regs[15] = value & MASK32

    @property
    def n(self) -> bool:
        return bool(self.apsr >> N_BIT & 1)

    @property
    def z(self) -> bool:
        return bool(self.apsr >> Z_BIT & 1)

    @property
    def c(self) -> bool:
        return bool(self.apsr >> C_BIT & 1)

    @property
    def v(self) -> bool:
        return bool(self.apsr >> V_BIT & 1)

    def copy(self) -> "MachineState":
        return MachineState(list(self.regs), self.apsr, self.cycles, bytearray(self.ram),
                            self.ram_base, self.rom, self.rom_base, self.halted)

    def snapshot(self) -> ArchSnapshot:
        return ArchSnapshot(tuple(self.regs), self.apsr, bytes(self.ram), self.halted)

    # -- memory ---------------------------------------------------------------

    def read32(self, address: int) -> int:
        off = address - self.ram_base
        if 0 <= off <= len(self.ram) - 4:
            return int.from_bytes(self.ram[off:off + 4], "little")
        off = address - self.rom_base
        if 0 <= off <= len(self.rom) - 4:
            return int.from_bytes(self.rom[off:off + 4], "little")
        raise MemoryFault(address)

    def write32(self, address: int, value: int) -> None:
        off = address - self.ram_base
        if 0 <= off <= len(self.ram) - 4:
            self.ram[off:off + 4] = (value & MASK32).to_bytes(4, "little")
            return
        raise MemoryFault(address, "store outside RAM")


def _nzcv(result: int, carry: int, overflow: int) -> int:
    return ((result >> 31) << N_BIT | (result == 0) << Z_BIT
            | carry << C_BIT | overflow << V_BIT)


def _add_with_carry(x: int, y: int, carry_in: int) -> tuple[int, int, int]:
    unsigned = x + y + carry_in
    result = unsigned & MASK32
    sx = x - (x >> 31 << 32)
    sy = y - (y >> 31 << 32)
    signed = sx + sy + carry_in
    sr = result - (result >> 31 << 32)
    return result, int(unsigned != result), int(signed != sr)


def condition_passed(cond: int, apsr: int) -> bool:
    n = apsr >> N_BIT & 1
    z = apsr >> Z_BIT & 1
    c = apsr >> C_BIT & 1
    v = apsr >> V_BIT & 1
    base = cond >> 1
    if base == 0:
        ok = z == 1
    elif base == 1:
        ok = c == 1
    elif base == 2:
        ok = n == 1
    elif base == 3:
        ok = v == 1
    elif base == 4:
        ok = c == 1 and z == 0
    elif base == 5:
        ok = n == v
    elif base == 6:
        ok = n == v and z == 0
    else:
        return True
    return not ok if cond & 1 else ok


_SETS_FLAGS = {"adds", "subs", "movs", "eors", "cmp", "cmp.w"}


def execute_step(state: MachineState, instr: Instruction) -> MachineState:
    """Execute `instr` as if fetched at ``state.pc``; updates `state` in place and returns it.

    Costs one cycle; fetch wait states are accounted by the caller.
    """
    if state.halted:
        raise RuntimeError("cannot step a halted machine")
    regs = state.regs
    pc = regs[15]
    fam = instr.family
    ops = instr.operands
    next_pc = pc + instr.size

    if fam in ("add", "sub", "cmp"):
        if fam == "cmp":
            rd = None
            rn, imm = ops
        else:
            rd, rn, imm = ops
        x = regs[rn]
        if fam == "add":
            result, carry, overflow = _add_with_carry(x, imm & MASK32, 0)
        else:
            result, carry, overflow = _add_with_carry(x, ~imm & MASK32, 1)
        if rd is not None:
            regs[rd] = result
        if instr.mnemonic in _SETS_FLAGS:
            state.apsr = _nzcv(result, carry, overflow) | (state.apsr & 0x0FFFFFFF)
    elif fam == "mov":
        rd, imm = ops
        regs[rd] = imm & MASK32
        if instr.mnemonic == "movs":
            state.apsr = (state.apsr & ~(3 << Z_BIT) & MASK32) | (imm >> 31 & 1) << N_BIT | (imm == 0) << Z_BIT
    elif fam == "eor":
        rd, rn, rm = ops
        result = regs[rn] ^ regs[rm]
        regs[rd] = result
        if instr.mnemonic == "eors":
            state.apsr = (state.apsr & ~(3 << Z_BIT) & MASK32) | (result >> 31) << N_BIT | (result == 0) << Z_BIT
    elif fam == "ldr":
        rt, rn, imm = ops
        regs[rt] = state.read32((regs[rn] + imm) & MASK32)
    elif fam == "str":
        rt, rn, imm = ops
        state.write32((regs[rn] + imm) & MASK32, regs[rt])
    elif fam == "b":
        cond = condition_of(instr.mnemonic)
        if cond is None or condition_passed(cond, state.apsr):
            next_pc = pc + 4 + ops[0]
    elif fam == "bkpt":
        state.halted = True
        next_pc = pc
    # nop: nothing

    regs[15] = next_pc & MASK32
    state.cycles += 1
    return state


def run_sequence(state: MachineState, instructions: Iterable[Instruction],
                 addresses: Iterable[int] | None = None) -> MachineState:
    """Execute an explicit instruction list, ignoring control flow.

    When `addresses` is given, pc is set to the matching address before each
    step, so an instruction runs at the slot it occupies in a reordered
    sequence.
    """
    addrs = iter(addresses) if addresses is not None else None
    for instr in instructions:
        if addrs is not None:
            state.pc = next(addrs)
        execute_step(state, instr)
    return state

