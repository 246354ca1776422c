"""Thumb-2 subset: instruction record, decoder and encoder.

Operand tuples are positional and depend on the mnemonic family:

=================================  ==========================
family                             operands
=================================  ==========================
add/sub (adds, add.w, addw, ...)   ``(rd, rn, imm)``
mov (movs, mov.w, movw)            ``(rd, imm)``
eor (eors, eor.w)                  ``(rd, rn, rm)``
ldr/str (ldr, ldr.w, str, str.w)   ``(rt, rn, imm)``
cmp (cmp, cmp.w)                   ``(rn, imm)``
b, b<cc> (and ``.w``)              ``(offset,)`` from pc + 4
nop, nop.w                         ``()``
bkpt                               ``(imm,)``
=================================  ==========================
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

__all__ = [
    "CONDITIONS",
    "DecodeError",
    "Instruction",
    "TruncatedInstruction",
    "UnencodableOperand",
    "UnsupportedEncoding",
    "decode",
    "encode",
    "encode_halfwords",
    "family",
    "is_32bit_prefix",
    "modified_immediate",
    "thumb_expand_imm",
]

CONDITIONS = ("eq", "ne", "hs", "lo", "mi", "pl", "vs", "vc",
              "hi", "ls", "ge", "lt", "gt", "le")
COND_ALIASES = {"cs": 2, "cc": 3}


class DecodeError(Exception):
    """Base class for decode failures."""


class UnsupportedEncoding(DecodeError):
    def __init__(self, address: int, raw: Sequence[int]):
        self.address = address
        self.raw = tuple(raw)
        words = " ".join(f"{h:04x}" for h in self.raw)
        super().__init__(f"unsupported encoding {words} at {address:#010x}")


class TruncatedInstruction(DecodeError):
    def __init__(self, address: int, raw: Sequence[int]):
        self.address = address
        self.raw = tuple(raw)
        super().__init__(f"32-bit prefix {self.raw[0]:04x} at {address:#010x} has no second halfword")


class UnencodableOperand(ValueError):
    """An operand does not fit the selected encoding."""


@dataclass(frozen=True)
class Instruction:
    mnemonic: str
    operands: tuple[int, ...] = ()
    width: int = 16
    raw: tuple[int, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.width not in (16, 32):
            raise ValueError(f"width must be 16 or 32, got {self.width}")
        if self.raw and len(self.raw) != self.width // 16:
            raise ValueError("raw halfword count does not match width")

    @property
    def size(self) -> int:
        return self.width // 8

    @property
    def family(self) -> str:
        return family(self.mnemonic)

    @property
    def is_branch(self) -> bool:
        return self.family == "b"

    def format(self, address: int | None = None) -> str:
        """Render as assembly text; branch targets become absolute when `address` is given."""
        fam = self.family
        ops = self.operands
        if fam in ("add", "sub"):
            body = f"{_reg(ops[0])}, {_reg(ops[1])}, #{_imm(ops[2])}"
        elif fam == "mov":
            body = f"{_reg(ops[0])}, #{_imm(ops[1])}"
        elif fam == "eor":
            body = f"{_reg(ops[0])}, {_reg(ops[1])}, {_reg(ops[2])}"
        elif fam in ("ldr", "str"):
            body = f"{_reg(ops[0])}, [{_reg(ops[1])}, #{_imm(ops[2])}]"
        elif fam == "cmp":
            body = f"{_reg(ops[0])}, #{_imm(ops[1])}"
        elif fam == "b":
            if address is None:
                body = f".{ops[0]:+d}"
            else:
                body = f"{(address + 4 + ops[0]) & 0xFFFFFFFF:#x}"
        elif fam == "bkpt":
            body = f"#{_imm(ops[0])}"
        else:
            body = ""
        return f"{self.mnemonic} {body}".rstrip()

    def __str__(self) -> str:
        return self.format()


def _reg(r: int) -> str:
    return {13: "sp", 14: "lr", 15: "pc"}.get(r, f"r{r}")


def _imm(v: int) -> str:
    return str(v) if -10 < v < 10 else hex(v)


_FAMILY = {
    "adds": "add", "add.w": "add", "addw": "add",
    "subs": "sub", "sub.w": "sub", "subw": "sub",
    "movs": "mov", "mov.w": "mov", "movw": "mov",
    "eors": "eor", "eor.w": "eor",
    "ldr": "ldr", "ldr.w": "ldr",
    "str": "str", "str.w": "str",
    "cmp": "cmp", "cmp.w": "cmp",
    "b": "b", "b.w": "b",
    "nop": "nop", "nop.w": "nop",
    "bkpt": "bkpt",
}
for _c in CONDITIONS:
    _FAMILY["b" + _c] = "b"
    _FAMILY["b" + _c + ".w"] = "b"

# mnemonic -> width in bits
WIDTHS = {m: (32 if (m.endswith(".w") or m in ("addw", "subw", "movw")) else 16) for m in _FAMILY}


def family(mnemonic: str) -> str:
    try:
        return _FAMILY[mnemonic]
    except KeyError:
        raise KeyError(f"unknown mnemonic {mnemonic!r}") from None


def condition_of(mnemonic: str) -> int | None:
    """Condition code of a branch mnemonic, or None when unconditional."""
    stem = mnemonic[1:].removesuffix(".w")
    return CONDITIONS.index(stem) if stem else None


# -- modified immediates -----------------------------------------------------

def thumb_expand_imm(imm12: int) -> int | None:
    """Expand a 12-bit i:imm3:imm8 field; None marks an UNPREDICTABLE pattern."""
    imm8 = imm12 & 0xFF
    if imm12 >> 10 == 0:
        kind = (imm12 >> 8) & 3
        if kind == 0:
            return imm8
        if imm8 == 0:
            return None
        if kind == 1:
            return imm8 << 16 | imm8
        if kind == 2:
            return imm8 << 24 | imm8 << 8
        return imm8 * 0x01010101
    unrot = 0x80 | (imm12 & 0x7F)
    rot = imm12 >> 7
    return ((unrot >> rot) | (unrot << (32 - rot))) & 0xFFFFFFFF


def _build_modified_table() -> dict[int, int]:
    table: dict[int, int] = {}
    for imm12 in range(4096):
        value = thumb_expand_imm(imm12)
        if value is not None and value not in table:
            table[value] = imm12
    return table


_MODIFIED = _build_modified_table()


def modified_immediate(value: int) -> int | None:
    """Smallest imm12 field encoding `value`, or None if it has no encoding."""
    return _MODIFIED.get(value & 0xFFFFFFFF) if 0 <= value <= 0xFFFFFFFF else None


# -- decoder ------------------------------------------------------------------

def is_32bit_prefix(hw: int) -> bool:
    return (hw >> 11) >= 0b11101


def _sext(value: int, bits: int) -> int:
    sign = 1 << (bits - 1)
    return (value & (sign - 1)) - (value & sign)


def decode(halfwords: Sequence[int], address: int = 0) -> Instruction:
    """Decode one instruction from its first one or two halfwords."""
    if not halfwords:
        raise ValueError("no halfword to decode")
    hw1 = halfwords[0] & 0xFFFF
    if is_32bit_prefix(hw1):
        if len(halfwords) < 2:
            raise TruncatedInstruction(address, (hw1,))
        hw2 = halfwords[1] & 0xFFFF
        instr = _decode32(hw1, hw2)
        if instr is None:
            raise UnsupportedEncoding(address, (hw1, hw2))
        return instr
    instr = _decode16(hw1)
    if instr is None:
        raise UnsupportedEncoding(address, (hw1,))
    return instr


def _decode16(hw: int) -> Instruction | None:
    raw = (hw,)
    top5 = hw >> 11
    if hw >> 10 == 0b000111:
        # adds/subs rd, rn, #imm3
        mnem = "subs" if hw & 0x0200 else "adds"
        return Instruction(mnem, (hw & 7, (hw >> 3) & 7, (hw >> 6) & 7), 16, raw)
    if top5 in (0b00100, 0b00101, 0b00110, 0b00111):
        rdn = (hw >> 8) & 7
        imm = hw & 0xFF
        if top5 == 0b00100:
            return Instruction("movs", (rdn, imm), 16, raw)
        if top5 == 0b00101:
            return Instruction("cmp", (rdn, imm), 16, raw)
        mnem = "adds" if top5 == 0b00110 else "subs"
        return Instruction(mnem, (rdn, rdn, imm), 16, raw)
    if hw >> 6 == 0b0100000001:
        rdn = hw & 7
        return Instruction("eors", (rdn, rdn, (hw >> 3) & 7), 16, raw)
    if top5 in (0b01100, 0b01101):
        mnem = "ldr" if top5 == 0b01101 else "str"
        return Instruction(mnem, (hw & 7, (hw >> 3) & 7, ((hw >> 6) & 0x1F) * 4), 16, raw)
    if hw >> 12 == 0b1101:
        cond = (hw >> 8) & 0xF
        if cond >= 14:
            return None
        return Instruction("b" + CONDITIONS[cond], (_sext(hw & 0xFF, 8) * 2,), 16, raw)
    if top5 == 0b11100:
        return Instruction("b", (_sext(hw & 0x7FF, 11) * 2,), 16, raw)
    if hw == 0xBF00:
        return Instruction("nop", (), 16, raw)
    if hw >> 8 == 0xBE:
        return Instruction("bkpt", (hw & 0xFF,), 16, raw)
    return None


def _decode32(hw1: int, hw2: int) -> Instruction | None:
    raw = (hw1, hw2)
    if hw1 == 0xF3AF and hw2 == 0x8000:
        return Instruction("nop.w", (), 32, raw)
    if hw1 >> 11 == 0b11110 and hw2 & 0x8000:
        # branches; bit 14 of hw2 set means BL/BLX
        if hw2 & 0x4000:
            return None
        s = (hw1 >> 10) & 1
        j1 = (hw2 >> 13) & 1
        j2 = (hw2 >> 11) & 1
        imm11 = hw2 & 0x7FF
        if hw2 & 0x1000:
            i1 = 1 ^ j1 ^ s
            i2 = 1 ^ j2 ^ s
            value = s << 24 | i1 << 23 | i2 << 22 | (hw1 & 0x3FF) << 12 | imm11 << 1
            return Instruction("b.w", (_sext(value, 25),), 32, raw)
        cond = (hw1 >> 6) & 0xF
        if cond >= 14:
            return None
        value = s << 20 | j2 << 19 | j1 << 18 | (hw1 & 0x3F) << 12 | imm11 << 1
        return Instruction("b" + CONDITIONS[cond] + ".w", (_sext(value, 21),), 32, raw)
    rn = hw1 & 0xF
    if hw1 & 0xFFE0 == 0xF8C0:
        # ldr.w / str.w imm12; rt occupies hw2[15:12]
        rt = (hw2 >> 12) & 0xF
        if rn == 15 or rt == 15:
            return None
        mnem = "ldr.w" if hw1 & 0x10 else "str.w"
        return Instruction(mnem, (rt, rn, hw2 & 0xFFF), 32, raw)
    if hw2 & 0x8000:
        return None
    rd = (hw2 >> 8) & 0xF
    imm12 = ((hw1 >> 10) & 1) << 11 | ((hw2 >> 12) & 7) << 8 | (hw2 & 0xFF)
    masked = hw1 & 0xFBF0
    if masked in (0xF100, 0xF1A0):
        # add.w / sub.w, S=0
        value = thumb_expand_imm(imm12)
        if value is None or rd in (13, 15) or rn == 15:
            return None
        return Instruction("add.w" if masked == 0xF100 else "sub.w", (rd, rn, value), 32, raw)
    if masked == 0xF1B0 and rd == 15:
        value = thumb_expand_imm(imm12)
        if value is None or rn == 15:
            return None
        return Instruction("cmp.w", (rn, value), 32, raw)
    if hw1 & 0xFBFF == 0xF04F:
        value = thumb_expand_imm(imm12)
        if value is None or rd in (13, 15):
            return None
        return Instruction("mov.w", (rd, value), 32, raw)
    if masked in (0xF200, 0xF2A0):
        if rd in (13, 15) or rn == 15:
            return None
        return Instruction("addw" if masked == 0xF200 else "subw", (rd, rn, imm12), 32, raw)
    if masked == 0xF240:
        if rd in (13, 15):
            return None
        return Instruction("movw", (rd, (hw1 & 0xF) << 12 | imm12), 32, raw)
    if hw1 & 0xFFF0 == 0xEA80 and hw2 & 0xF0F0 == 0:
        rm = hw2 & 0xF
        if rd in (13, 15) or rn in (13, 15) or rm in (13, 15):
            return None
        return Instruction("eor.w", (rd, rn, rm), 32, raw)
    return None


# -- encoder ------------------------------------------------------------------

def _check_reg(r: int, what: str, *, low: bool = False, forbid: tuple[int, ...] = ()) -> int:
    if not isinstance(r, int) or not 0 <= r < 16:
        raise UnencodableOperand(f"{what} register {r!r} out of range")
    if low and r > 7:
        raise UnencodableOperand(f"{what} must be a low register (r0-r7), got r{r}")
    if r in forbid:
        raise UnencodableOperand(f"{what} cannot be {_reg(r)} in this encoding")
    return r


def _check_imm(v: int, lo: int, hi: int, what: str = "immediate", step: int = 1) -> int:
    if not isinstance(v, int) or not lo <= v <= hi or v % step:
        extra = f" and a multiple of {step}" if step > 1 else ""
        raise UnencodableOperand(f"{what} {v!r} outside [{lo}, {hi}]{extra}")
    return v


def _split_imm12(imm12: int) -> tuple[int, int]:
    """Place an i:imm3:imm8 field into (hw1 bits, hw2 bits)."""
    return (imm12 >> 11) << 10, ((imm12 >> 8) & 7) << 12 | (imm12 & 0xFF)


def _modified_or_raise(value: int) -> int:
    imm12 = modified_immediate(value)
    if imm12 is None:
        raise UnencodableOperand(f"{value:#x} is not a Thumb-2 modified immediate")
    return imm12


def encode_halfwords(instr: Instruction) -> tuple[int, ...]:
    m = instr.mnemonic
    ops = instr.operands
    fam = family(m)
    if instr.width != WIDTHS[m]:
        raise UnencodableOperand(f"{m} is {WIDTHS[m]}-bit, instruction says {instr.width}")
    expected = {"add": 3, "sub": 3, "mov": 2, "eor": 3, "ldr": 3, "str": 3,
                "cmp": 2, "b": 1, "nop": 0, "bkpt": 1}[fam]
    if len(ops) != expected:
        raise UnencodableOperand(f"{m} takes {expected} operands, got {len(ops)}")

    if m in ("adds", "subs"):
        rd, rn, imm = ops
        _check_reg(rd, "rd", low=True)
        _check_reg(rn, "rn", low=True)
        sub = m == "subs"
        if imm <= 7 and imm >= 0:
            return (0x1C00 | sub << 9 | imm << 6 | rn << 3 | rd,)
        if rd != rn:
            raise UnencodableOperand(f"{m} with rd != rn needs an immediate in [0, 7]")
        _check_imm(imm, 0, 255)
        return ((0x3800 if sub else 0x3000) | rd << 8 | imm,)
    if m in ("add.w", "sub.w"):
        rd, rn, imm = ops
        _check_reg(rd, "rd", forbid=(13, 15))
        _check_reg(rn, "rn", forbid=(15,))
        h1, h2 = _split_imm12(_modified_or_raise(imm))
        return ((0xF100 if m == "add.w" else 0xF1A0) | h1 | rn, h2 | rd << 8)
    if m in ("addw", "subw"):
        rd, rn, imm = ops
        _check_reg(rd, "rd", forbid=(13, 15))
        _check_reg(rn, "rn", forbid=(15,))
        h1, h2 = _split_imm12(_check_imm(imm, 0, 4095))
        return ((0xF200 if m == "addw" else 0xF2A0) | h1 | rn, h2 | rd << 8)
    if m == "movs":
        rd, imm = ops
        _check_reg(rd, "rd", low=True)
        return (0x2000 | rd << 8 | _check_imm(imm, 0, 255),)
    if m == "mov.w":
        rd, imm = ops
        _check_reg(rd, "rd", forbid=(13, 15))
        h1, h2 = _split_imm12(_modified_or_raise(imm))
        return (0xF04F | h1, h2 | rd << 8)
    if m == "movw":
        rd, imm = ops
        _check_reg(rd, "rd", forbid=(13, 15))
        _check_imm(imm, 0, 0xFFFF)
        h1, h2 = _split_imm12(imm & 0xFFF)
        return (0xF240 | h1 | imm >> 12, h2 | rd << 8)
    if m == "eors":
        rd, rn, rm = ops
        _check_reg(rd, "rd", low=True)
        _check_reg(rm, "rm", low=True)
        if rn != rd:
            raise UnencodableOperand("eors requires rd == rn")
        return (0x4040 | rm << 3 | rd,)
    if m == "eor.w":
        rd, rn, rm = ops
        _check_reg(rd, "rd", forbid=(13, 15))
        _check_reg(rn, "rn", forbid=(13, 15))
        _check_reg(rm, "rm", forbid=(13, 15))
        return (0xEA80 | rn, rd << 8 | rm)
    if m in ("ldr", "str"):
        rt, rn, imm = ops
        _check_reg(rt, "rt", low=True)
        _check_reg(rn, "rn", low=True)
        _check_imm(imm, 0, 124, step=4)
        return ((0x6800 if m == "ldr" else 0x6000) | (imm // 4) << 6 | rn << 3 | rt,)
    if m in ("ldr.w", "str.w"):
        rt, rn, imm = ops
        _check_reg(rt, "rt", forbid=(15,))
        _check_reg(rn, "rn", forbid=(15,))
        _check_imm(imm, 0, 4095)
        return ((0xF8D0 if m == "ldr.w" else 0xF8C0) | rn, rt << 12 | imm)
    if m == "cmp":
        rn, imm = ops
        _check_reg(rn, "rn", low=True)
        return (0x2800 | rn << 8 | _check_imm(imm, 0, 255),)
    if m == "cmp.w":
        rn, imm = ops
        _check_reg(rn, "rn", forbid=(15,))
        h1, h2 = _split_imm12(_modified_or_raise(imm))
        return (0xF1B0 | h1 | rn, h2 | 0x0F00)
    if fam == "b":
        (offset,) = ops
        cond = condition_of(m)
        wide = m.endswith(".w")
        if not wide and cond is None:
            _check_imm(offset, -2048, 2046, "branch offset", 2)
            return (0xE000 | (offset >> 1) & 0x7FF,)
        if not wide:
            _check_imm(offset, -256, 254, "branch offset", 2)
            return (0xD000 | cond << 8 | (offset >> 1) & 0xFF,)
        if cond is None:
            _check_imm(offset, -(1 << 24), (1 << 24) - 2, "branch offset", 2)
            v = offset & 0x1FFFFFF
            s, i1, i2 = v >> 24, (v >> 23) & 1, (v >> 22) & 1
            j1, j2 = 1 ^ i1 ^ s, 1 ^ i2 ^ s
            return (0xF000 | s << 10 | (v >> 12) & 0x3FF,
                    0x9000 | j1 << 13 | j2 << 11 | (v >> 1) & 0x7FF)
        _check_imm(offset, -(1 << 20), (1 << 20) - 2, "branch offset", 2)
        v = offset & 0x1FFFFF
        s, j2, j1 = v >> 20, (v >> 19) & 1, (v >> 18) & 1
        return (0xF000 | s << 10 | cond << 6 | (v >> 12) & 0x3F,
                0x8000 | j1 << 13 | j2 << 11 | (v >> 1) & 0x7FF)
    if m == "nop":
        return (0xBF00,)
    if m == "nop.w":
        return (0xF3AF, 0x8000)
    if m == "bkpt":
        return (0xBE00 | _check_imm(ops[0], 0, 255),)
    raise UnencodableOperand(f"no encoding for {m}")


def encode(instr: Instruction) -> bytes:
    """Little-endian byte image of one instruction."""
    return b"".join(h.to_bytes(2, "little") for h in encode_halfwords(instr))
