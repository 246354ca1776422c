"""Thumb-2 subset: encoding, assembly and architectural execution."""

from .assembler import (
    DEFAULT_BASE,
    LINE_BYTES,
    AsmSyntaxError,
    AssemblyError,
    Program,
    UnknownMnemonic,
    assemble_text,
    disassemble,
    format_listing,
)
from .encoding import (
    CONDITIONS,
    DecodeError,
    Instruction,
    TruncatedInstruction,
    UnencodableOperand,
    UnsupportedEncoding,
    decode,
    encode,
    encode_halfwords,
)
from .machine import (
    DEFAULT_RAM_BASE,
    DEFAULT_RAM_SIZE,
    ArchSnapshot,
    MachineState,
    MemoryFault,
    execute_step,
    run_sequence,
)

__all__ = [
    "ArchSnapshot", "AsmSyntaxError", "AssemblyError", "CONDITIONS", "DEFAULT_BASE",
    "DEFAULT_RAM_BASE", "DEFAULT_RAM_SIZE", "DecodeError", "Instruction", "LINE_BYTES",
    "MachineState", "MemoryFault", "Program", "TruncatedInstruction", "UnencodableOperand",
    "UnknownMnemonic", "UnsupportedEncoding", "assemble_text", "decode", "disassemble",
    "encode", "encode_halfwords", "execute_step", "format_listing", "run_sequence",
]
