"""Two-pass assembler and disassembler for the toy ISA.

Text format, one statement per line::

    ; comment
    .equ  LIMIT, 100
    .org  0x1800
    loop: LDI  R2, [0x3000]      ; label and instruction on one line
          ST   [R1+2], R2
          .targets a, b          ; declared targets of the next JMPR
          JMPR R3
          .word 0x1234, loop

A trailing ``; @name`` comment attaches a tag to an instruction; tags survive
a format/parse round trip and are used by the instrumentation passes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterator, Union

from . import isa
from .isa import Fmt, Instruction, Op
from .memmap import DEFAULT_MAP, PERIPH_SYMBOLS

Expr = Union[int, str]


class AsmError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line else msg)


@dataclass
class Label:
    name: str
    line: int | None = None


@dataclass
class Org:
    addr: int
    line: int | None = None


@dataclass
class Word:
    values: list[Expr]
    line: int | None = None


@dataclass
class Equ:
    name: str
    value: int
    line: int | None = None


@dataclass
class Ins:
    op: Op
    a: int = 0
    b: int = 0
    imm: Expr = 0
    targets: tuple[str, ...] = ()
    tag: str | None = None
    line: int | None = None

    @property
    def fmt(self) -> Fmt:
        return isa.FORMATS[self.op]

    @property
    def size(self) -> int:
        return 4 if self.fmt in (Fmt.RI, Fmt.RRI, Fmt.I) else 2

    def registers(self) -> tuple[int, ...]:
        return Instruction(self.op, self.a, self.b, 0).registers()


Item = Union[Label, Org, Word, Equ, Ins]


@dataclass
class AsmProgram:
    items: list[Item] = field(default_factory=list)

    def instructions(self) -> Iterator[Ins]:
        return (it for it in self.items if isinstance(it, Ins))

    def labels(self) -> list[str]:
        return [it.name for it in self.items if isinstance(it, Label)]

    def copy(self) -> "AsmProgram":
        return AsmProgram([replace(it) for it in self.items])

    def __str__(self) -> str:
        return format_program(self)


@dataclass
class Assembled:
    """Result of assembly: placed bytes plus symbol and address tables."""

    program: AsmProgram
    symbols: dict[str, int]
    addrs: list[int | None]  # per item; None for non-placing items
    segments: dict[int, bytearray]

    def image(self, base: int | None = None, size: int | None = None) -> bytes:
        """Flatten segments into one zero-filled byte string starting at ``base``."""
        if not self.segments:
            return bytes(size or 0)
        lo = min(self.segments) if base is None else base
        hi = max(a + len(s) for a, s in self.segments.items())
        n = (hi - lo) if size is None else size
        out = bytearray(n)
        for a, s in self.segments.items():
            if a < lo or a + len(s) > lo + n:
                raise AsmError(f"segment at 0x{a:04x} outside image [0x{lo:04x}, 0x{lo + n:04x})")
            out[a - lo:a - lo + len(s)] = s
        return bytes(out)

    def addr_of(self, ins: Ins) -> int:
        for it, a in zip(self.program.items, self.addrs):
            if it is ins:
                assert a is not None
                return a
        raise KeyError(ins)

    def instruction_map(self) -> dict[int, tuple[Ins, Instruction]]:
        """Address -> (source item, resolved instruction) for every instruction."""
        out = {}
        for it, a in zip(self.program.items, self.addrs):
            if isinstance(it, Ins):
                assert a is not None
                out[a] = (it, resolve(it, self.symbols))
        return out

    def tagged(self, tag: str) -> list[int]:
        return [a for it, a in zip(self.program.items, self.addrs)
                if isinstance(it, Ins) and it.tag == tag and a is not None]


# --- parsing -----------------------------------------------------------------

_REG = re.compile(r"^(R[0-7]|SP)$", re.I)
_MEM = re.compile(r"^\[\s*(R[0-7]|SP)\s*(?:([+-])\s*(.+?))?\s*\]$", re.I)
_ABS = re.compile(r"^\[\s*(.+?)\s*\]$")
_SYM = re.compile(r"^[A-Za-z_.][\w.]*$")
_EXPR = re.compile(r"^([A-Za-z_.][\w.]*)\s*([+-])\s*(\w+)$")


def _reg(tok: str, line: int) -> int:
    tok = tok.strip()
    if not _REG.match(tok):
        raise AsmError(f"expected register, got {tok!r}", line)
    r = 1 if tok.upper() == "SP" else int(tok[1])
    if r == 0:
        raise AsmError("R0 (PC) is not a valid operand", line)
    return r


def _expr(tok: str, line: int) -> Expr:
    tok = tok.strip()
    if not tok:
        raise AsmError("missing operand", line)
    try:
        return int(tok, 0)
    except ValueError:
        pass
    if _SYM.match(tok) or _EXPR.match(tok):
        return tok
    raise AsmError(f"bad expression {tok!r}", line)


def _split_operands(text: str) -> list[str]:
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(cur.strip())
            cur = ""
        else:
            cur += ch
    if cur.strip():
        parts.append(cur.strip())
    return parts


def _parse_mem(tok: str, line: int) -> tuple[int, Expr]:
    m = _MEM.match(tok.strip())
    if not m:
        raise AsmError(f"expected [Rn+off], got {tok!r}", line)
    r = _reg(m.group(1), line)
    if m.group(2) is None:
        return r, 0
    off = _expr(m.group(3), line)
    if m.group(2) == "-":
        if isinstance(off, int):
            off = -off
        else:
            raise AsmError("negative symbolic offsets are not supported", line)
    return r, off


def _parse_abs(tok: str, line: int) -> Expr:
    m = _ABS.match(tok.strip())
    if not m or _REG.match(m.group(1)):
        raise AsmError(f"expected [addr], got {tok!r}", line)
    return _expr(m.group(1), line)


def parse_instruction(mn: str, ops: list[str], line: int) -> Ins:
    try:
        op = Op[mn.upper()]
    except KeyError:
        raise AsmError(f"unknown mnemonic {mn!r}", line) from None
    fmt = isa.FORMATS[op]
    want = {Fmt.N: 0, Fmt.R: 1, Fmt.I: 1, Fmt.RR: 2, Fmt.RI: 2, Fmt.RRI: 2}[fmt]
    if len(ops) != want:
        raise AsmError(f"{op.name} takes {want} operand(s), got {len(ops)}", line)
    if fmt is Fmt.N:
        return Ins(op, line=line)
    if fmt is Fmt.R:
        return Ins(op, a=_reg(ops[0], line), line=line)
    if fmt is Fmt.I:
        return Ins(op, imm=_expr(ops[0], line), line=line)
    if fmt is Fmt.RR:
        return Ins(op, a=_reg(ops[0], line), b=_reg(ops[1], line), line=line)
    if op is Op.LD:
        rb, off = _parse_mem(ops[1], line)
        return Ins(op, a=_reg(ops[0], line), b=rb, imm=off, line=line)
    if op is Op.ST:
        rb, off = _parse_mem(ops[0], line)
        return Ins(op, a=rb, b=_reg(ops[1], line), imm=off, line=line)
    if op is Op.MOVI:
        return Ins(op, a=_reg(ops[0], line), imm=_expr(ops[1], line), line=line)
    if op is Op.LDI:
        return Ins(op, a=_reg(ops[0], line), imm=_parse_abs(ops[1], line), line=line)
    if op is Op.STI:
        return Ins(op, a=_reg(ops[1], line), imm=_parse_abs(ops[0], line), line=line)
    if op is Op.IN:
        return Ins(op, a=_reg(ops[0], line), imm=_expr(ops[1], line), line=line)
    if op is Op.OUT:
        return Ins(op, a=_reg(ops[1], line), imm=_expr(ops[0], line), line=line)
    raise AssertionError(op)


def parse(text: str) -> AsmProgram:
    """Parse assembly text into an :class:`AsmProgram` (no address resolution)."""
    items: list[Item] = []
    pending_targets: tuple[str, ...] | None = None
    for n, raw in enumerate(text.splitlines(), 1):
        code, _, comment = raw.partition(";")
        tag = None
        m = re.match(r"^\s*@([\w.-]+)", comment)
        if m:
            tag = m.group(1)
        code = code.strip()
        while True:
            m = re.match(r"^([A-Za-z_.][\w.]*)\s*:(.*)$", code)
            if not m:
                break
            items.append(Label(m.group(1), n))
            code = m.group(2).strip()
        if not code:
            continue
        head, *rest = code.split(None, 1)
        ops = _split_operands(rest[0] if rest else "")
        d = head.lower()
        if d == ".org":
            if len(ops) != 1:
                raise AsmError(".org takes one address", n)
            v = _expr(ops[0], n)
            if not isinstance(v, int):
                raise AsmError(".org needs a numeric address", n)
            items.append(Org(v, n))
        elif d == ".word":
            if not ops:
                raise AsmError(".word needs at least one value", n)
            items.append(Word([_expr(o, n) for o in ops], n))
        elif d == ".equ":
            if len(ops) != 2 or not _SYM.match(ops[0]):
                raise AsmError(".equ NAME, value", n)
            v = _expr(ops[1], n)
            if not isinstance(v, int):
                raise AsmError(".equ needs a numeric value", n)
            items.append(Equ(ops[0], v, n))
        elif d == ".targets":
            if not ops or not all(_SYM.match(o) for o in ops):
                raise AsmError(".targets takes a list of labels", n)
            pending_targets = tuple(ops)
        elif d.startswith("."):
            raise AsmError(f"unknown directive {head!r}", n)
        else:
            ins = parse_instruction(head, ops, n)
            ins.tag = tag
            if pending_targets is not None:
                if ins.op is not Op.JMPR:
                    raise AsmError(".targets must precede a JMPR", n)
                ins.targets = pending_targets
                pending_targets = None
            items.append(ins)
    if pending_targets is not None:
        raise AsmError(".targets not followed by JMPR")
    return AsmProgram(items)


# --- assembly ----------------------------------------------------------------

def eval_expr(e: Expr, symbols: dict[str, int], line: int | None = None) -> int:
    if isinstance(e, int):
        return e & 0xFFFF
    m = _EXPR.match(e)
    if m:
        base = eval_expr(m.group(1), symbols, line)
        off = int(m.group(3), 0)
        return (base + off if m.group(2) == "+" else base - off) & 0xFFFF
    if e in symbols:
        return symbols[e] & 0xFFFF
    raise AsmError(f"undefined symbol {e!r}", line)


def resolve(ins: Ins, symbols: dict[str, int]) -> Instruction:
    imm = eval_expr(ins.imm, symbols, ins.line) if ins.size == 4 else 0
    return Instruction(ins.op, ins.a, ins.b, imm)


def assemble(prog: AsmProgram | str, origin: int | None = None,
             symbols: dict[str, int] | None = None) -> Assembled:
    """Assemble ``prog`` (text or parsed). Default origin is the pmem start."""
    if isinstance(prog, str):
        prog = parse(prog)
    syms: dict[str, int] = dict(PERIPH_SYMBOLS)
    if symbols:
        syms.update(symbols)
    pc = DEFAULT_MAP.pmem.start if origin is None else origin
    addrs: list[int | None] = []
    defined: set[str] = set()
    for it in prog.items:
        if isinstance(it, Org):
            pc = it.addr
            addrs.append(None)
        elif isinstance(it, Label):
            if it.name in defined:
                raise AsmError(f"duplicate label {it.name!r}", it.line)
            defined.add(it.name)
            syms[it.name] = pc
            addrs.append(pc)
        elif isinstance(it, Equ):
            syms[it.name] = it.value
            addrs.append(None)
        elif isinstance(it, Word):
            addrs.append(pc)
            pc += 2 * len(it.values)
        else:
            if pc & 1:
                raise AsmError(f"instruction at odd address 0x{pc:04x}", it.line)
            addrs.append(pc)
            pc += it.size
        if pc > 0x10000:
            raise AsmError("program runs past the end of memory", getattr(it, "line", None))
    segments: dict[int, bytearray] = {}
    cur_start: int | None = None
    for it, a in zip(prog.items, addrs):
        if isinstance(it, Org):
            cur_start = None
            continue
        if not isinstance(it, (Word, Ins)):
            continue
        assert a is not None
        if isinstance(it, Word):
            data = b"".join(eval_expr(v, syms, it.line).to_bytes(2, "little") for v in it.values)
        else:
            for t in it.targets:
                if t not in syms:
                    raise AsmError(f"undefined .targets label {t!r}", it.line)
            try:
                data = isa.encode(resolve(it, syms))
            except isa.DecodeError as e:
                raise AsmError(str(e), it.line) from None
        if cur_start is None or cur_start + len(segments[cur_start]) != a:
            cur_start = a
            segments[a] = bytearray()
        segments[cur_start] += data
    _check_overlap(segments)
    return Assembled(prog, syms, addrs, segments)


def _check_overlap(segments: dict[int, bytearray]) -> None:
    spans = sorted((a, a + len(s)) for a, s in segments.items() if s)
    for (a0, e0), (a1, _) in zip(spans, spans[1:]):
        if a1 < e0:
            raise AsmError(f"segments overlap at 0x{a1:04x}")


# --- formatting / disassembly --------------------------------------------------

def _r(r: int) -> str:
    return f"R{r}"


def _e(v: Expr, signed: bool = False) -> str:
    if isinstance(v, str):
        return v
    if signed:
        v = isa.to_signed(v & 0xFFFF)
        return str(v)
    return f"0x{v & 0xFFFF:04x}"


def _fmt_ops(op: Op, a: int, b: int, imm: Expr) -> str:
    fmt = isa.FORMATS[op]
    if fmt is Fmt.N:
        return op.name
    if fmt is Fmt.R:
        return f"{op.name} {_r(a)}"
    if fmt is Fmt.I:
        return f"{op.name} {_e(imm)}"
    if fmt is Fmt.RR:
        return f"{op.name} {_r(a)}, {_r(b)}"
    if op in (Op.LD, Op.ST):
        if isinstance(imm, int):
            off = isa.to_signed(imm & 0xFFFF)
            mem = f"[{_r(b if op is Op.LD else a)}{off:+d}]"
        else:
            mem = f"[{_r(b if op is Op.LD else a)}+{imm}]"
        return f"LD {_r(a)}, {mem}" if op is Op.LD else f"ST {mem}, {_r(b)}"
    if op is Op.MOVI:
        return f"MOVI {_r(a)}, {_e(imm)}"
    if op is Op.LDI:
        return f"LDI {_r(a)}, [{_e(imm)}]"
    if op is Op.STI:
        return f"STI [{_e(imm)}], {_r(a)}"
    if op is Op.IN:
        return f"IN {_r(a)}, {_e(imm)}"
    return f"OUT {_e(imm)}, {_r(a)}"


def format_instruction(ins: Instruction) -> str:
    return _fmt_ops(ins.op, ins.a, ins.b, ins.imm)


def format_program(prog: AsmProgram) -> str:
    out = []
    for it in prog.items:
        if isinstance(it, Label):
            out.append(f"{it.name}:")
        elif isinstance(it, Org):
            out.append(f".org 0x{it.addr:04x}")
        elif isinstance(it, Equ):
            out.append(f".equ {it.name}, 0x{it.value:04x}")
        elif isinstance(it, Word):
            out.append("    .word " + ", ".join(_e(v) for v in it.values))
        else:
            if it.targets:
                out.append("    .targets " + ", ".join(it.targets))
            text = "    " + _fmt_ops(it.op, it.a, it.b, it.imm)
            if it.tag:
                text += f"  ; @{it.tag}"
            out.append(text)
    return "\n".join(out) + "\n"


def disassemble(data: bytes, base: int) -> str:
    """Render ``data`` placed at ``base`` as re-assemblable text.

    Undecodable words become ``.word`` lines, so
    ``assemble(disassemble(b, base)).image(base) == b`` for any even-length ``b``.
    """
    lines = [f".org 0x{base:04x}"]
    i = 0
    while i < len(data):
        try:
            ins = isa.decode(data, i)
            lines.append(f"    {format_instruction(ins)}")
            i += ins.size
        except isa.DecodeError:
            if i + 1 < len(data):
                w = data[i] | (data[i + 1] << 8)
            else:
                raise AsmError("odd-length data cannot be disassembled") from None
            lines.append(f"    .word 0x{w:04x}")
            i += 2
    return "\n".join(lines) + "\n"
