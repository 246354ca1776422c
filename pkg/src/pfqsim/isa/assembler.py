"""Line-oriented assembler, flat-image program container and linear disassembler.

Source syntax::

    ; comment
    .org 0x08000000          ; first .org sets the base address
    .equ MASK, 0x20000000
    start:
        mov   r5, #MASK
    loop: ldr r0, [r5]
        eor   r1, r1, r0
        .nop32 3
        .word 0xdeadbeef
        bkpt  #0

Mnemonics without a width suffix pick the encoding a GNU-style assembler
would pick outside an IT block: flag-setting forms (``adds``, ``movs``,
``eors``) prefer 16 bits, plain ``add``/``mov``/``eor`` are 32-bit.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator

from .encoding import (
    COND_ALIASES,
    CONDITIONS,
    DecodeError,
    Instruction,
    UnencodableOperand,
    decode,
    encode,
    is_32bit_prefix,
    modified_immediate,
)

__all__ = [
    "AssemblyError",
    "AsmSyntaxError",
    "DEFAULT_BASE",
    "LINE_BYTES",
    "Program",
    "UnknownMnemonic",
    "assemble_text",
    "disassemble",
    "format_listing",
]

DEFAULT_BASE = 0x0800_0000
LINE_BYTES = 16
ERASED = 0xFF


class AssemblyError(Exception):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class AsmSyntaxError(AssemblyError):
    """Malformed line, bad operand or unencodable value."""


class UnknownMnemonic(AssemblyError):
    pass


@dataclass(frozen=True)
class Program:
    base_address: int
    image: bytes
    symbols: dict[str, int] = field(default_factory=dict, compare=False)
    instructions: tuple[int, ...] = ()

    def __post_init__(self):
        if self.base_address % LINE_BYTES:
            raise ValueError(f"base address {self.base_address:#x} is not {LINE_BYTES}-byte aligned")

    @classmethod
    def from_binary(cls, image: bytes, base_address: int = DEFAULT_BASE) -> "Program":
        """Wrap a flat image; instruction starts come from a linear sweep."""
        starts = tuple(addr for addr, instr, _ in disassemble(image, base_address) if instr is not None)
        return cls(base_address, bytes(image), {}, starts)

    @property
    def end_address(self) -> int:
        return self.base_address + len(self.image)

    def __len__(self) -> int:
        return len(self.image)

    def padded_image(self) -> bytes:
        """Image padded with erased-flash bytes to a whole number of lines."""
        pad = -len(self.image) % LINE_BYTES
        return self.image + bytes([ERASED]) * pad

    def line_count(self) -> int:
        return -(-len(self.image) // LINE_BYTES)

    def line_address(self, number: int) -> int:
        """Base address of the `number`-th line (1-based)."""
        if not 1 <= number <= self.line_count():
            raise IndexError(f"line {number} outside program of {self.line_count()} lines")
        return self.base_address + (number - 1) * LINE_BYTES

    def ordinal_of(self, address: int) -> int | None:
        """1-based position of the instruction starting at `address`."""
        try:
            return self._ordinals[address]
        except KeyError:
            return None

    def address_of(self, ordinal: int) -> int:
        return self.instructions[ordinal - 1]

    @property
    def _ordinals(self) -> dict[int, int]:
        cache = self.__dict__.get("_ordinal_cache")
        if cache is None:
            cache = {a: i + 1 for i, a in enumerate(self.instructions)}
            object.__setattr__(self, "_ordinal_cache", cache)
        return cache

    def halfwords_at(self, address: int) -> tuple[int, ...]:
        off = address - self.base_address
        img = self.image
        if off < 0 or off + 2 > len(img):
            return ()
        first = img[off] | img[off + 1] << 8
        if is_32bit_prefix(first) and off + 4 <= len(img):
            return first, img[off + 2] | img[off + 3] << 8
        return (first,)

    def instruction_at(self, address: int) -> Instruction:
        return decode(self.halfwords_at(address), address)

    def listing(self) -> list[tuple[int, Instruction]]:
        return [(a, self.instruction_at(a)) for a in self.instructions]


# -- parsing ------------------------------------------------------------------

_REG_NAMES = {f"r{i}": i for i in range(16)}
_REG_NAMES.update({"sb": 9, "sl": 10, "fp": 11, "ip": 12, "sp": 13, "lr": 14, "pc": 15})
_LABEL = re.compile(r"^([A-Za-z_.$][\w.$]*)\s*:\s*(.*)$")
_MEM = re.compile(r"^\[\s*(\w+)\s*(?:,\s*#?\s*([^\]]+?))?\s*\]$")
_SYMBOL = re.compile(r"^[A-Za-z_.$][\w.$]*$")

_BASE_OPS = {"add", "adds", "addw", "sub", "subs", "subw", "mov", "movs", "movw",
             "eor", "eors", "ldr", "str", "cmp", "b", "nop", "bkpt"}


@dataclass
class _Item:
    line: int
    kind: str  # "instr" | "word" | "org"
    mnemonic: str = ""
    args: list[str] = field(default_factory=list)
    size: int = 0
    address: int = 0
    value: str = ""
    labels: list[str] = field(default_factory=list)


def _strip_comment(text: str) -> str:
    for marker in (";", "@", "//"):
        pos = text.find(marker)
        if pos >= 0:
            text = text[:pos]
    return text.strip()


def _split_operands(text: str) -> list[str]:
    out, depth, cur = [], 0, []
    for ch in text:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            out.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if "".join(cur).strip():
        out.append("".join(cur).strip())
    return out


def _canonical_mnemonic(word: str, line: int) -> tuple[str, str]:
    """Split a source mnemonic into (base, suffix) with suffix in {'', '.w', '.n'}."""
    word = word.lower()
    suffix = ""
    if word.endswith((".w", ".n")):
        word, suffix = word[:-2], word[-2:]
    if word in _BASE_OPS:
        return word, suffix
    if word.startswith("b") and len(word) == 3:
        cond = word[1:]
        if cond in CONDITIONS:
            return word, suffix
        if cond in COND_ALIASES:
            return "b" + CONDITIONS[COND_ALIASES[cond]], suffix
    raise UnknownMnemonic(line, f"unknown mnemonic {word + suffix!r}")


class _Assembler:
    def __init__(self, base: int, defines: dict[str, int] | None):
        self.base = base
        self.symbols: dict[str, int] = {}
        self.equs: dict[str, int] = dict(defines or {})
        self.items: list[_Item] = []

    # value helpers

    def number(self, text: str, line: int, *, allow_labels: bool = True) -> int:
        text = text.strip().lstrip("#").strip()
        neg = text.startswith("-")
        if neg:
            text = text[1:].strip()
        try:
            value = int(text, 0)
        except ValueError:
            if not _SYMBOL.match(text):
                raise AsmSyntaxError(line, f"bad number {text!r}") from None
            if text in self.equs:
                value = self.equs[text]
            elif allow_labels and text in self.symbols:
                value = self.symbols[text]
            else:
                raise AsmSyntaxError(line, f"undefined symbol {text!r}") from None
        return -value if neg else value

    @staticmethod
    def register(text: str, line: int) -> int:
        try:
            return _REG_NAMES[text.strip().lower()]
        except KeyError:
            raise AsmSyntaxError(line, f"expected a register, got {text!r}") from None

    # pass 1: tokenise

    def parse(self, source: str) -> None:
        pending: list[str] = []
        for lineno, raw in enumerate(source.splitlines(), start=1):
            text = _strip_comment(raw)
            while True:
                m = _LABEL.match(text)
                if not m or m.group(1).startswith("."):
                    break
                name = m.group(1)
                if name in pending or any(name in it.labels for it in self.items):
                    raise AsmSyntaxError(lineno, f"duplicate label {name!r}")
                pending.append(name)
                text = m.group(2).strip()
            if not text:
                continue
            parts = text.split(None, 1)
            head = parts[0]
            rest = parts[1].strip() if len(parts) > 1 else ""
            if head.startswith("."):
                self._directive(head.lower(), rest, lineno, pending)
            else:
                base, suffix = _canonical_mnemonic(head, lineno)
                item = _Item(lineno, "instr", base + suffix, _split_operands(rest))
                item.labels, pending = pending, []
                self.items.append(item)
        if pending:
            self.items.append(_Item(0, "end", labels=pending))

    def _directive(self, name: str, rest: str, line: int, pending: list[str]) -> None:
        args = _split_operands(rest)
        if name == ".org":
            if len(args) != 1:
                raise AsmSyntaxError(line, ".org takes one address")
            item = _Item(line, "org", value=args[0])
        elif name == ".equ" or name == ".set":
            if len(args) != 2 or not _SYMBOL.match(args[0]):
                raise AsmSyntaxError(line, f"{name} takes a name and a value")
            self.equs[args[0]] = self.number(args[1], line, allow_labels=False)
            return
        elif name in (".nop16", ".nop32"):
            count = self.number(args[0], line) if len(args) == 1 else -1
            if count < 0:
                raise AsmSyntaxError(line, f"{name} takes a non-negative count")
            mnem = "nop" if name == ".nop16" else "nop.w"
            first = True
            for _ in range(count):
                item = _Item(line, "instr", mnem, [])
                if first:
                    item.labels, pending[:] = list(pending), []
                    first = False
                self.items.append(item)
            return
        elif name == ".word":
            if not args:
                raise AsmSyntaxError(line, ".word takes at least one value")
            for i, arg in enumerate(args):
                item = _Item(line, "word", value=arg, size=4)
                if i == 0:
                    item.labels, pending[:] = list(pending), []
                self.items.append(item)
            return
        else:
            raise AsmSyntaxError(line, f"unknown directive {name!r}")
        item.labels, pending[:] = list(pending), []
        self.items.append(item)

    # pass 2: sizes and addresses, relaxing branches until stable

    def layout(self) -> None:
        for item in self.items:
            if item.kind == "instr":
                item.size = self._initial_size(item)
        for _ in range(64):
            self._place()
            grew = False
            for item in self.items:
                if item.kind == "instr" and item.mnemonic.startswith("b") and item.size == 2 \
                        and not item.mnemonic.endswith(".n") and self._branch_needs_wide(item):
                    item.size = 4
                    grew = True
            if not grew:
                return
        raise AsmSyntaxError(0, "branch relaxation did not converge")

    def _place(self) -> None:
        addr = self.base
        seen_code = False
        self.symbols = {}
        for item in self.items:
            if item.kind == "org":
                target = self.number(item.value, item.line, allow_labels=False)
                if not seen_code:
                    if target % LINE_BYTES:
                        raise AsmSyntaxError(item.line, f"base {target:#x} is not {LINE_BYTES}-byte aligned")
                    self.base = addr = target
                elif target < addr:
                    raise AsmSyntaxError(item.line, f".org {target:#x} moves backwards")
                else:
                    item.size = target - addr
            item.address = addr
            for label in item.labels:
                self.symbols[label] = addr
            if item.kind in ("instr", "word"):
                seen_code = True
            addr += item.size

    def _branch_needs_wide(self, item: _Item) -> bool:
        if len(item.args) != 1:
            return False
        try:
            target = self.number(item.args[0], item.line)
        except AsmSyntaxError:
            return False
        offset = target - (item.address + 4)
        limit = 2048 if item.mnemonic == "b" else 256
        return not -limit <= offset < limit

    def _initial_size(self, item: _Item) -> int:
        m = item.mnemonic
        if m.endswith(".w") or m in ("addw", "subw", "movw"):
            return 4
        if m.endswith(".n") or m.startswith("b") or m == "nop":
            return 2
        return self._select(item, sizing=True)[1]

    # pass 3: encode

    def emit(self) -> tuple[bytes, list[int]]:
        out = bytearray()
        starts: list[int] = []
        for item in self.items:
            if item.kind == "org":
                out += bytes([ERASED]) * item.size
            elif item.kind == "word":
                value = self.number(item.value, item.line)
                if not -(1 << 31) <= value <= 0xFFFFFFFF:
                    raise AsmSyntaxError(item.line, f".word value {value:#x} does not fit 32 bits")
                out += (value & 0xFFFFFFFF).to_bytes(4, "little")
            elif item.kind == "instr":
                instr, size = self._select(item, sizing=False)
                try:
                    blob = encode(instr)
                except UnencodableOperand as exc:
                    raise AsmSyntaxError(item.line, str(exc)) from None
                if len(blob) != size:
                    raise AsmSyntaxError(item.line, "internal size mismatch")
                starts.append(item.address)
                out += blob
        return bytes(out), starts

    # encoding selection

    def _select(self, item: _Item, *, sizing: bool) -> tuple[Instruction | None, int]:
        """Choose the concrete mnemonic; when `sizing`, symbols may still be unresolved."""
        line = item.line
        m = item.mnemonic
        args = item.args
        wide = m.endswith(".w")
        narrow = m.endswith(".n")
        base = m[:-2] if (wide or narrow) else m

        def imm(text: str) -> int | None:
            try:
                return self.number(text, line)
            except AsmSyntaxError:
                if sizing and _SYMBOL.match(text.strip().lstrip("#").strip().lstrip("-")):
                    return None
                raise

        def need(n: int) -> None:
            if len(args) != n:
                raise AsmSyntaxError(line, f"{m} expects {n} operands, got {len(args)}")

        def make(mnemonic: str, operands: tuple[int, ...]) -> tuple[Instruction, int]:
            width = 32 if (mnemonic.endswith(".w") or mnemonic in ("addw", "subw", "movw")) else 16
            if narrow and width == 32:
                raise AsmSyntaxError(line, f"{m}: no 16-bit encoding for these operands")
            return Instruction(mnemonic, operands, width), width // 8

        if base in ("add", "sub", "adds", "subs", "addw", "subw"):
            if len(args) == 2:
                args = [args[0], args[0], args[1]]
            if len(args) != 3:
                raise AsmSyntaxError(line, f"{m} expects 2 or 3 operands")
            rd = self.register(args[0], line)
            rn = self.register(args[1], line)
            value = imm(args[2])
            fam = base[:3]
            if value is not None and value < 0:
                value = -value
                fam = "sub" if fam == "add" else "add"
            if base in ("addw", "subw"):
                return make(fam + "w", (rd, rn, value if value is not None else 0))
            if base.endswith("s"):
                if not wide and rd < 8 and rn < 8 and (value is None or value <= 7 or (rd == rn and value <= 255)):
                    return make(fam + "s", (rd, rn, value or 0))
                raise AsmSyntaxError(line, f"{m}: only 16-bit flag-setting forms are supported")
            if value is None or modified_immediate(value) is not None:
                return make(fam + ".w", (rd, rn, value or 0))
            if not wide and 0 <= value <= 4095:
                return make(fam + "w", (rd, rn, value))
            raise AsmSyntaxError(line, f"{m}: immediate {value:#x} not encodable")
        if base in ("mov", "movs", "movw"):
            need(2)
            rd = self.register(args[0], line)
            value = imm(args[1])
            if base == "movs":
                if wide:
                    raise AsmSyntaxError(line, "movs.w is not supported")
                return make("movs", (rd, value or 0))
            if base == "movw":
                return make("movw", (rd, value or 0))
            if value is None or modified_immediate(value) is not None:
                return make("mov.w", (rd, value or 0))
            if not wide and 0 <= value <= 0xFFFF:
                return make("movw", (rd, value))
            raise AsmSyntaxError(line, f"{m}: immediate {value:#x} not encodable")
        if base in ("eor", "eors"):
            if len(args) == 2:
                args = [args[0], args[0], args[1]]
            need(3)
            rd, rn, rm = (self.register(a, line) for a in args)
            if base == "eors":
                if wide:
                    raise AsmSyntaxError(line, "eors.w is not supported")
                return make("eors", (rd, rn, rm))
            return make("eor.w", (rd, rn, rm))
        if base in ("ldr", "str"):
            need(2)
            rt = self.register(args[0], line)
            mm = _MEM.match(args[1].strip())
            if not mm:
                raise AsmSyntaxError(line, f"expected [rn, #imm], got {args[1]!r}")
            rn = self.register(mm.group(1), line)
            offset = imm(mm.group(2)) if mm.group(2) else 0
            short_ok = rt < 8 and rn < 8 and (offset is None or (0 <= offset <= 124 and offset % 4 == 0))
            if not wide and short_ok:
                return make(base, (rt, rn, offset or 0))
            return make(base + ".w", (rt, rn, offset or 0))
        if base == "cmp":
            need(2)
            rn = self.register(args[0], line)
            value = imm(args[1])
            if not wide and rn < 8 and (value is None or 0 <= value <= 255):
                return make("cmp", (rn, value or 0))
            return make("cmp.w", (rn, value or 0))
        if base == "b" or (base.startswith("b") and base[1:] in CONDITIONS):
            need(1)
            target = imm(args[0])
            offset = 0 if target is None else target - (item.address + 4)
            mnem = base + ".w" if item.size == 4 or wide else base
            return make(mnem, (offset,))
        if base == "nop":
            need(0)
            return make("nop.w" if wide else "nop", ())
        if base == "bkpt":
            if len(args) > 1:
                raise AsmSyntaxError(line, "bkpt takes at most one operand")
            value = imm(args[0]) if args else 0
            return make("bkpt", (value or 0,))
        raise UnknownMnemonic(line, f"unknown mnemonic {m!r}")


def assemble_text(source: str, base_address: int = DEFAULT_BASE,
                  defines: dict[str, int] | None = None) -> Program:
    """Assemble source text into a flat Program image."""
    if base_address % LINE_BYTES:
        raise ValueError(f"base address {base_address:#x} is not {LINE_BYTES}-byte aligned")
    asm = _Assembler(base_address, defines)
    asm.parse(source)
    asm.layout()
    image, starts = asm.emit()
    return Program(asm.base, image, dict(asm.symbols), tuple(starts))


# -- disassembly --------------------------------------------------------------

def disassemble(image: bytes, base_address: int = DEFAULT_BASE) -> Iterator[tuple[int, Instruction | None, tuple[int, ...]]]:
    """Linear sweep yielding (address, instruction or None, raw halfwords)."""
    off = 0
    n = len(image)
    while off + 2 <= n:
        hw1 = image[off] | image[off + 1] << 8
        addr = base_address + off
        if is_32bit_prefix(hw1) and off + 4 <= n:
            hws: tuple[int, ...] = (hw1, image[off + 2] | image[off + 3] << 8)
        else:
            hws = (hw1,)
        try:
            instr = decode(hws, addr)
        except DecodeError:
            yield addr, None, (hw1,)
            off += 2
            continue
        yield addr, instr, hws
        off += instr.size


def format_listing(image: bytes, base_address: int = DEFAULT_BASE) -> str:
    lines = []
    for addr, instr, raw in disassemble(image, base_address):
        words = " ".join(f"{h:04x}" for h in raw)
        text = instr.format(addr) if instr is not None else f".hword {raw[0]:#06x}"
        lines.append(f"{addr:08x}:  {words:<10s} {text}")
    return "\n".join(lines)
