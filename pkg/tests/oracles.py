"""Independent reference models used by the tests.

Nothing here shares code with the fetch path: the LRU oracle is a plain
list, the reorder oracle executes an explicit instruction list with the isa
module alone, and decoding is cross-checked against capstone/keystone.
"""

from __future__ import annotations

import random

from pfqsim.isa import Instruction, MachineState, Program, assemble_text, run_sequence
from pfqsim.isa.assembler import LINE_BYTES
from pfqsim.isa.encoding import CONDITIONS, thumb_expand_imm

CS_REG = {f"r{i}": i for i in range(16)}
CS_REG.update({"sb": 9, "sl": 10, "fp": 11, "ip": 12, "sp": 13, "lr": 14, "pc": 15})


class ListLRU:
    """Most-recent-last list; the head is always the victim."""

    def __init__(self, n: int):
        self.n = n
        self.order: list[int] = []

    def access(self, tag: int) -> int | None:
        """Touch or insert `tag`; returns the evicted tag, if any."""
        if tag in self.order:
            self.order.remove(tag)
            self.order.append(tag)
            return None
        evicted = None
        if len(self.order) == self.n:
            evicted = self.order.pop(0)
        self.order.append(tag)
        return evicted


# -- capstone / keystone -------------------------------------------------------

def capstone_view(raw: bytes, address: int):
    """(mnemonic, operand tuple in pfqsim order) for one instruction, via capstone."""
    import capstone
    from capstone import arm

    md = capstone.Cs(capstone.CS_ARCH_ARM, capstone.CS_MODE_THUMB)
    md.detail = True
    insns = list(md.disasm(raw, address))
    if not insns or insns[0].size != len(raw):
        return None
    insn = insns[0]
    ops = []
    for o in insn.operands:
        if o.type == arm.ARM_OP_REG:
            ops.append(CS_REG[insn.reg_name(o.reg)])
        elif o.type == arm.ARM_OP_IMM:
            ops.append(o.imm)
        elif o.type == arm.ARM_OP_MEM:
            ops.append(CS_REG[insn.reg_name(o.mem.base)])
            ops.append(o.mem.disp)
    m = insn.mnemonic
    stem = m.removesuffix(".w")
    if stem in ("adds", "subs", "eors") and len(ops) == 2:
        # two-operand assembler alias: rd is also the first source
        ops = [ops[0], ops[0], ops[1]]
    if stem.startswith("b") and stem != "bkpt":
        ops = [(ops[0] & 0xFFFFFFFF) - (address + 4)]
    else:
        ops = [v & 0xFFFFFFFF for v in ops]
    if stem in ("ldr", "str") and len(ops) == 2:
        ops.append(0)
    return m, tuple(ops)


def keystone_bytes(text: str, address: int = 0x0800_0000) -> bytes:
    import keystone

    ks = keystone.Ks(keystone.KS_ARCH_ARM, keystone.KS_MODE_THUMB)
    enc, _ = ks.asm(text, address)
    return bytes(enc)


# -- reordered-sequence oracle -------------------------------------------------

def reordered_execution(program: Program, target_line: int, state: MachineState) -> MachineState:
    """Final state of straight-line code when the line at `target_line` is
    replaced by the line before it, each replayed instruction running at the
    pc of the slot it replaces."""
    instrs = program.listing()
    prev = target_line - LINE_BYTES
    seq: list[Instruction] = []
    addrs: list[int] = []
    replay = [(a, i) for a, i in instrs if prev <= a < target_line]
    for addr, instr in instrs:
        if target_line <= addr < target_line + LINE_BYTES:
            if addr == target_line:
                for r_addr, r_instr in replay:
                    seq.append(r_instr)
                    addrs.append(target_line + (r_addr - prev))
            continue
        seq.append(instr)
        addrs.append(addr)
    run_sequence(state, seq, addrs)
    return state


def reordered_ordinals(program: Program, target_line: int) -> list[int]:
    out = []
    prev = target_line - LINE_BYTES
    replay = [program.ordinal_of(a) for a in program.instructions if prev <= a < target_line]
    for addr in program.instructions:
        if target_line <= addr < target_line + LINE_BYTES:
            if addr == target_line:
                out.extend(replay)
            continue
        out.append(program.ordinal_of(addr))
    return out


# -- random straight-line programs ---------------------------------------------

RAM_REG = 12
_MODIFIED = [1, 2, 5, 0xFF, 0x100, 0xAB00, 0x00AB00AB, 0xAB00AB00, 0xABABABAB, 0x3FC, 0x80000000]


def random_wide_instruction(rng: random.Random) -> str:
    """One 32-bit, non-branching instruction; r12 holds the RAM base and is never written."""
    rd = rng.choice([r for r in range(12)])
    rn = rng.randrange(13)
    kind = rng.choice(["add.w", "sub.w", "addw", "subw", "mov.w", "movw", "eor.w",
                       "ldr.w", "str.w", "cmp.w", "nop.w"])
    if kind in ("add.w", "sub.w"):
        return f"{kind} r{rd}, r{rn}, #{rng.choice(_MODIFIED)}"
    if kind in ("addw", "subw"):
        return f"{kind} r{rd}, r{rn}, #{rng.randrange(4096)}"
    if kind == "mov.w":
        return f"mov.w r{rd}, #{rng.choice(_MODIFIED)}"
    if kind == "movw":
        return f"movw r{rd}, #{rng.randrange(65536)}"
    if kind == "eor.w":
        return f"eor.w r{rd}, r{rn}, r{rng.randrange(13)}"
    if kind in ("ldr.w", "str.w"):
        return f"{kind} r{rd}, [r{RAM_REG}, #{4 * rng.randrange(64)}]"
    if kind == "cmp.w":
        return f"cmp.w r{rn}, #{rng.choice(_MODIFIED)}"
    return "nop.w"


def random_straight_line(rng: random.Random, n: int | None = None) -> tuple[str, Program]:
    if n is None:
        n = rng.randint(8, 32)
    lines = [random_wide_instruction(rng) for _ in range(n)]
    source = "\n".join(lines) + "\nbkpt #0\n"
    return source, assemble_text(source)


def full_wide_lines(program: Program) -> list[int]:
    """Line addresses holding exactly four 32-bit instructions, excluding the first line."""
    out = []
    for k in range(2, program.line_count() + 1):
        line = program.line_address(k)
        inside = [a for a in program.instructions if line <= a < line + LINE_BYTES]
        if len(inside) == 4 and all(program.instruction_at(a).width == 32 for a in inside):
            out.append(line)
    return out


# -- supported instruction space -------------------------------------------------

def I(m, *ops):
    width = 32 if m.endswith(".w") or m in ("addw", "subw", "movw") else 16
    return Instruction(m, tuple(ops), width)


def supported_space():
    """Every supported mnemonic over exhaustive or densely sampled operand ranges."""
    lo, regs = range(8), range(16)
    noreg = [r for r in regs if r not in (13, 15)]
    mods = sorted({thumb_expand_imm(i) for i in range(4096)} - {None})
    for rd in lo:
        for rn in lo:
            for imm in range(8):
                yield I("adds", rd, rn, imm)
                yield I("subs", rd, rn, imm)
        for imm in range(256):
            yield I("adds", rd, rd, imm)
            yield I("subs", rd, rd, imm)
            yield I("movs", rd, imm)
            yield I("cmp", rd, imm)
        for rm in lo:
            yield I("eors", rd, rd, rm)
            for rn in lo:
                for imm in range(0, 128, 4):
                    yield I("ldr", rd, rn, imm)
                    yield I("str", rd, rn, imm)
    for rd in noreg:
        for rn in [r for r in regs if r != 15]:
            for imm in mods[::7] + [mods[-1]]:
                yield I("add.w", rd, rn, imm)
                yield I("sub.w", rd, rn, imm)
            for imm in range(0, 4096, 97):
                yield I("addw", rd, rn, imm)
                yield I("subw", rd, rn, imm)
        for imm in mods:
            yield I("mov.w", rd, imm)
        for imm in range(0, 65536, 257):
            yield I("movw", rd, imm)
        for rn in noreg:
            for rm in noreg:
                yield I("eor.w", rd, rn, rm)
    for rt in [r for r in regs if r != 15]:
        for rn in [r for r in regs if r != 15]:
            for imm in (0, 1, 4, 255, 4095):
                yield I("ldr.w", rt, rn, imm)
                yield I("str.w", rt, rn, imm)
        for imm in mods[::5]:
            yield I("cmp.w", rt, imm)
    for off in range(-2048, 2048, 2):
        yield I("b", off)
    for cond in CONDITIONS:
        for off in range(-256, 256, 2):
            yield I("b" + cond, off)
        for off in range(-(1 << 20), 1 << 20, 4094):
            yield I("b" + cond + ".w", off)
    for off in range(-(1 << 24), 1 << 24, 65534):
        yield I("b.w", off)
    yield I("nop")
    yield I("nop.w")
    for imm in range(256):
        yield I("bkpt", imm)
