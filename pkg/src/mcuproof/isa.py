"""Toy 16-bit ISA: opcodes, operand formats, encoding and cycle costs.

Every instruction is one or two little-endian 16-bit words. The first word
holds the opcode in its high byte and two 3-bit register fields in its low
byte (``aaa0bbb0`` packed as ``(a << 4) | b``); unused fields must be zero so
that decoding is exact and ``encode(decode(x)) == x``. R0 is the program
counter and never appears as an operand; R1 is the stack pointer.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass


class DecodeError(ValueError):
    """Raised when a byte sequence is not a valid instruction."""


class Fmt(enum.Enum):
    N = "n"  # no operands
    R = "r"  # one register
    RR = "rr"  # two registers
    RI = "ri"  # register + immediate/address
    RRI = "rri"  # two registers + offset
    I = "i"  # immediate/address


class Op(enum.IntEnum):
    NOP = 0x01
    HALT = 0x02
    MOVI = 0x10
    MOV = 0x11
    LD = 0x12
    ST = 0x13
    LDI = 0x14
    STI = 0x15
    ADD = 0x20
    SUB = 0x21
    AND = 0x22
    XOR = 0x23
    CMP = 0x24
    JMP = 0x30
    JZ = 0x31
    JNZ = 0x32
    JC = 0x33
    JMPR = 0x34
    CALL = 0x35
    RET = 0x36
    PUSH = 0x40
    POP = 0x41
    IN = 0x50
    OUT = 0x51


FORMATS: dict[Op, Fmt] = {
    Op.NOP: Fmt.N,
    Op.HALT: Fmt.N,
    Op.RET: Fmt.N,
    Op.MOVI: Fmt.RI,
    Op.LDI: Fmt.RI,
    Op.STI: Fmt.RI,
    Op.IN: Fmt.RI,
    Op.OUT: Fmt.RI,
    Op.MOV: Fmt.RR,
    Op.ADD: Fmt.RR,
    Op.SUB: Fmt.RR,
    Op.AND: Fmt.RR,
    Op.XOR: Fmt.RR,
    Op.CMP: Fmt.RR,
    Op.LD: Fmt.RRI,
    Op.ST: Fmt.RRI,
    Op.JMP: Fmt.I,
    Op.JZ: Fmt.I,
    Op.JNZ: Fmt.I,
    Op.JC: Fmt.I,
    Op.CALL: Fmt.I,
    Op.JMPR: Fmt.R,
    Op.PUSH: Fmt.R,
    Op.POP: Fmt.R,
}

# Fixed cycle cost per instruction.
CYCLES: dict[Op, int] = {
    Op.NOP: 1,
    Op.HALT: 1,
    Op.MOVI: 2,
    Op.MOV: 1,
    Op.LD: 3,
    Op.ST: 3,
    Op.LDI: 3,
    Op.STI: 3,
    Op.ADD: 1,
    Op.SUB: 1,
    Op.AND: 1,
    Op.XOR: 1,
    Op.CMP: 1,
    Op.JMP: 2,
    Op.JZ: 2,
    Op.JNZ: 2,
    Op.JC: 2,
    Op.JMPR: 2,
    Op.CALL: 4,
    Op.RET: 3,
    Op.PUSH: 2,
    Op.POP: 2,
    Op.IN: 2,
    Op.OUT: 2,
}

IRQ_CYCLES = 4
DMA_WORD_CYCLES = 1

COND_JUMPS = frozenset({Op.JZ, Op.JNZ, Op.JC})
TRANSFERS = frozenset({Op.JMP, Op.JZ, Op.JNZ, Op.JC, Op.JMPR, Op.CALL, Op.RET})
ALU_OPS = frozenset({Op.ADD, Op.SUB, Op.AND, Op.XOR, Op.CMP})
LOADS = frozenset({Op.LD, Op.LDI, Op.IN})
STORES = frozenset({Op.ST, Op.STI})

PC, SP = 0, 1


@dataclass(frozen=True)
class Instruction:
    """A decoded instruction.

    ``a`` and ``b`` are register numbers whose meaning depends on the format:
    RR is ``(rd, rs)``, RRI is ``(rd, rb)`` for LD and ``(rb, rs)`` for ST,
    RI and R use ``a`` only. ``imm`` holds the 16-bit immediate, absolute
    address or offset.
    """

    op: Op
    a: int = 0
    b: int = 0
    imm: int = 0

    @property
    def fmt(self) -> Fmt:
        return FORMATS[self.op]

    @property
    def size(self) -> int:
        return 4 if self.fmt in (Fmt.RI, Fmt.RRI, Fmt.I) else 2

    @property
    def cycles(self) -> int:
        return CYCLES[self.op]

    @property
    def is_transfer(self) -> bool:
        return self.op in TRANSFERS

    def sets_flags(self) -> bool:
        return self.op in ALU_OPS

    def reads_flags(self) -> bool:
        return self.op in COND_JUMPS

    def registers(self) -> tuple[int, ...]:
        fmt = self.fmt
        if fmt in (Fmt.RR, Fmt.RRI):
            return (self.a, self.b)
        if fmt in (Fmt.R, Fmt.RI):
            return (self.a,)
        return ()

    def __str__(self) -> str:
        from .asm import format_instruction

        return format_instruction(self)


def _check_reg(r: int) -> None:
    if not 1 <= r <= 7:
        raise DecodeError(f"register R{r} is not a valid operand")


def validate(ins: Instruction) -> Instruction:
    """Check operand ranges; returns ``ins`` unchanged or raises DecodeError."""
    fmt = ins.fmt
    used = {Fmt.N: 0, Fmt.R: 1, Fmt.RI: 1, Fmt.I: 0, Fmt.RR: 2, Fmt.RRI: 2}[fmt]
    regs = (ins.a, ins.b)
    for i in range(2):
        if i < used:
            _check_reg(regs[i])
        elif regs[i] != 0:
            raise DecodeError(f"{ins.op.name}: unused register field is {regs[i]}")
    has_imm = fmt in (Fmt.RI, Fmt.RRI, Fmt.I)
    if has_imm and not 0 <= ins.imm <= 0xFFFF:
        raise DecodeError(f"{ins.op.name}: immediate {ins.imm} out of range")
    if not has_imm and ins.imm != 0:
        raise DecodeError(f"{ins.op.name}: takes no immediate")
    return ins


def encode(ins: Instruction) -> bytes:
    validate(ins)
    w0 = (int(ins.op) << 8) | (ins.a << 4) | ins.b
    out = w0.to_bytes(2, "little")
    if ins.size == 4:
        out += ins.imm.to_bytes(2, "little")
    return out


def decode(buf: bytes | bytearray | memoryview, offset: int = 0) -> Instruction:
    """Decode one instruction at ``offset``.

    Raises:
        DecodeError: unknown opcode, reserved bits set, R0 used as an
            operand, or the buffer ends inside the instruction.
    """
    if offset + 2 > len(buf):
        raise DecodeError("truncated instruction")
    w0 = buf[offset] | (buf[offset + 1] << 8)
    try:
        op = Op(w0 >> 8)
    except ValueError:
        raise DecodeError(f"unknown opcode 0x{w0 >> 8:02x}") from None
    lo = w0 & 0xFF
    if lo & 0x88:
        raise DecodeError("reserved bits set")
    a, b = lo >> 4, lo & 0x7
    imm = 0
    if FORMATS[op] in (Fmt.RI, Fmt.RRI, Fmt.I):
        if offset + 4 > len(buf):
            raise DecodeError("truncated immediate")
        imm = buf[offset + 2] | (buf[offset + 3] << 8)
    return validate(Instruction(op, a, b, imm))


def to_signed(v: int) -> int:
    return v - 0x10000 if v & 0x8000 else v
