"""Control-flow graphs and the two logging passes (CF-Log and I-Log).

Both passes rewrite an executable-region (ER) program: the application code
followed by ``er_exit: RET``, the single exit at ``er_max``. Every original
instruction ``k`` is preceded by a label ``__o{k}`` in the output so that
verifiers can map logged addresses back to source positions. Instructions
the passes add carry the tag ``int`` and are never instrumented again; the
duplicated, logged copy of a DIALED-style load carries ``dfa_load`` instead.

Registers R6 and R7 are reserved as scratch for the inserted sequences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .asm import AsmError, AsmProgram, Ins, Label, Org, Word, eval_expr
from .isa import COND_JUMPS, Op
from .memmap import PERIPH_SYMBOLS, Region

R6, R7 = 6, 7
INTERNAL = "int"
DFA_LOAD = "dfa_load"
ER_ENTRY = "er_entry"
ER_EXIT = "er_exit"
ER_END = "__er_end"
ABORT = "__abort"


class InstrumentError(ValueError):
    pass


class DirectLogWrite(InstrumentError):
    pass


class CodeTooLargeForEr(InstrumentError):
    pass


class UnresolvedTarget(InstrumentError):
    pass


class ReservedRegister(InstrumentError):
    pass


class LiveFlags(InstrumentError):
    pass


# --- output-region layout --------------------------------------------------------

@dataclass(frozen=True)
class LogLayout:
    """OR = output words | cf_cur | cf_log | il_cur | il_log | tmp.

    ``cf_cap`` counts 2-byte destinations, ``il_cap`` counts
    (address, value) pairs.
    """

    base: int = 0x3000
    n_out: int = 8
    cf_cap: int = 256
    il_cap: int = 128

    @property
    def output(self) -> Region:
        return Region(self.base, 2 * self.n_out)

    @property
    def cf_cur(self) -> int:
        return self.output.end

    @property
    def cf_log(self) -> Region:
        return Region(self.cf_cur + 2, 2 * self.cf_cap)

    @property
    def il_cur(self) -> int:
        return self.cf_log.end

    @property
    def il_log(self) -> Region:
        return Region(self.il_cur + 2, 4 * self.il_cap)

    @property
    def tmp(self) -> int:
        return self.il_log.end

    @property
    def or_min(self) -> int:
        return self.base

    @property
    def or_max(self) -> int:
        return self.tmp

    @property
    def region(self) -> Region:
        return Region(self.or_min, self.or_max + 2 - self.or_min)

    @property
    def protected(self) -> Region:
        """Cursors, both logs and the scratch word: application stores must stay out."""
        return Region(self.cf_cur, self.tmp + 2 - self.cf_cur)

    def symbols(self) -> dict[str, int]:
        syms = {f"OUT{i}": self.base + 2 * i for i in range(self.n_out)}
        syms.update(
            OR_BASE=self.base, CF_CUR=self.cf_cur, CF_BASE=self.cf_log.start,
            CF_LAST=self.cf_log.end - 2, IL_CUR=self.il_cur, IL_BASE=self.il_log.start,
            IL_LAST=self.il_log.end - 4, LOG_TMP=self.tmp, LOG_LO=self.protected.start,
            LOG_HI=self.protected.end,
        )
        return syms

    def view(self, or_bytes: bytes) -> "OrView":
        """Split raw OR bytes into output, CF-Log and I-Log (entries below the cursors)."""
        def w(addr: int) -> int:
            i = addr - self.base
            return or_bytes[i] | (or_bytes[i + 1] << 8)

        if len(or_bytes) != self.region.length:
            raise ValueError(f"OR must be {self.region.length} bytes, got {len(or_bytes)}")
        out = bytes(or_bytes[:self.output.length])
        cf, il = None, None
        cur = w(self.cf_cur)
        if self.cf_log.start <= cur <= self.cf_log.end and not (cur - self.cf_log.start) % 2:
            cf = [w(a) for a in range(self.cf_log.start, cur, 2)]
        cur = w(self.il_cur)
        if self.il_log.start <= cur <= self.il_log.end and not (cur - self.il_log.start) % 4:
            il = [(w(a), w(a + 2)) for a in range(self.il_log.start, cur, 4)]
        return OrView(out, cf, il)


@dataclass(frozen=True)
class OrView:
    output: bytes
    cf_log: list[int] | None
    i_log: list[tuple[int, int]] | None


# --- CFG ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Block:
    id: int
    start: int  # index of first instruction
    end: int  # one past the last instruction
    labels: tuple[str, ...]
    terminator: str  # fall | jump | cond | call | ret | indirect | halt


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    kind: str  # direct | conditional | fallthrough | call | return | indirect


@dataclass
class Cfg:
    code: list[Ins]
    label_index: dict[str, int]
    blocks: list[Block]
    edges: list[Edge]
    block_of: list[int] = field(default_factory=list)

    def successors(self, b: int) -> list[Edge]:
        return [e for e in self.edges if e.src == b]

    def target_index(self, ins: Ins) -> int:
        return self.label_index[ins.imm]  # type: ignore[index]


def _code_and_labels(prog: AsmProgram) -> tuple[list[Ins], dict[str, int], dict[int, list[str]]]:
    code: list[Ins] = []
    labels: dict[str, int] = {}
    at: dict[int, list[str]] = {}
    for it in prog.items:
        if isinstance(it, Label):
            labels[it.name] = len(code)
            at.setdefault(len(code), []).append(it.name)
        elif isinstance(it, Ins):
            code.append(it)
        elif isinstance(it, (Org, Word)):
            raise InstrumentError("ER programs may not contain .org or .word")
    return code, labels, at


def _target(ins: Ins, labels: dict[str, int]) -> int:
    if not isinstance(ins.imm, str) or ins.imm not in labels:
        raise UnresolvedTarget(f"line {ins.line}: {ins.op.name} target {ins.imm!r} is not a label")
    return labels[ins.imm]


def build_cfg(prog: AsmProgram) -> Cfg:
    """Basic blocks split at labels and transfers; return edges via function discovery."""
    code, labels, at = _code_and_labels(prog)
    n = len(code)
    leaders = {0} if n else set()
    leaders.update(i for i in labels.values() if i < n)
    for i, ins in enumerate(code):
        if ins.op in (Op.JMP, Op.CALL) or ins.op in COND_JUMPS:
            _target(ins, labels)
        if ins.op is Op.JMPR:
            if not ins.targets:
                raise UnresolvedTarget(f"line {ins.line}: JMPR without .targets")
            for t in ins.targets:
                if t not in labels:
                    raise UnresolvedTarget(f"line {ins.line}: .targets label {t!r} undefined")
        if (ins.op in (Op.JMP, Op.CALL, Op.RET, Op.JMPR, Op.HALT) or ins.op in COND_JUMPS) and i + 1 < n:
            leaders.add(i + 1)
    starts = sorted(leaders)
    blocks: list[Block] = []
    block_of = [0] * n
    for bi, s in enumerate(starts):
        e = starts[bi + 1] if bi + 1 < len(starts) else n
        last = code[e - 1].op
        term = ("jump" if last is Op.JMP else "cond" if last in COND_JUMPS else
                "call" if last is Op.CALL else "ret" if last is Op.RET else
                "indirect" if last is Op.JMPR else "halt" if last is Op.HALT else "fall")
        blocks.append(Block(bi, s, e, tuple(at.get(s, ())), term))
        for i in range(s, e):
            block_of[i] = bi

    def bidx(i: int) -> int | None:
        return block_of[i] if i < n else None

    edges: list[Edge] = []
    intra: dict[int, list[int]] = {b.id: [] for b in blocks}
    for b in blocks:
        last = code[b.end - 1]

        def add(dst: int | None, kind: str) -> None:
            if dst is not None:
                edges.append(Edge(b.id, dst, kind))
                if kind not in ("call", "return"):
                    intra[b.id].append(dst)
        if b.terminator == "jump":
            add(bidx(_target(last, labels)), "direct")
        elif b.terminator == "cond":
            add(bidx(_target(last, labels)), "conditional")
            add(bidx(b.end), "fallthrough")
        elif b.terminator == "call":
            add(bidx(_target(last, labels)), "call")
        elif b.terminator == "indirect":
            for t in last.targets:
                add(bidx(labels[t]), "indirect")
        elif b.terminator == "fall":
            add(bidx(b.end), "fallthrough")
    # Return edges: every RET reachable inside a called function goes back
    # to the fall-through of each of its call sites.
    call_sites: dict[int, list[int]] = {}
    for b in blocks:
        if b.terminator == "call":
            call_sites.setdefault(bidx(_target(code[b.end - 1], labels)), []).append(b.id)
    for entry, sites in call_sites.items():
        seen, todo = set(), [entry]
        while todo:
            x = todo.pop()
            if x is None or x in seen:
                continue
            seen.add(x)
            todo.extend(intra[x])
        for x in sorted(seen):
            if blocks[x].terminator == "ret":
                for s in sites:
                    ft = bidx(blocks[s].end)
                    if ft is not None:
                        edges.append(Edge(x, ft, "return"))
    return Cfg(code, labels, blocks, edges, block_of)


# --- helpers ------------------------------------------------------------------------

def er_program(app: AsmProgram) -> AsmProgram:
    """Append the single ER exit ``er_exit: RET`` to an application."""
    names = set(app.labels())
    if ER_EXIT in names or ER_ENTRY in names:
        raise InstrumentError(f"{ER_ENTRY}/{ER_EXIT} are reserved labels")
    return AsmProgram(app.copy().items + [Label(ER_EXIT), Ins(Op.RET)])


def plain_er(er: AsmProgram) -> AsmProgram:
    """Uninstrumented ER: just the entry label in front."""
    return AsmProgram([Label(ER_ENTRY)] + er.copy().items)


def _is_internal(ins: Ins) -> bool:
    return ins.tag in (INTERNAL, DFA_LOAD)


def _i(op: Op, a: int = 0, b: int = 0, imm=0) -> Ins:
    return Ins(op, a, b, imm, tag=INTERNAL)


def _check_reserved(code: list[Ins]) -> None:
    for ins in code:
        if not _is_internal(ins) and {R6, R7} & set(ins.registers()):
            raise ReservedRegister(f"line {ins.line}: R6/R7 are reserved for instrumentation")


def flags_live_at(code: list[Ins], labels: dict[str, int], start: int) -> bool:
    """Could a flag value present before ``code[start]`` be read later?

    Calls and returns are treated as flag-clobbering (callee-saved flags are
    not part of the calling convention).
    """
    seen: set[int] = set()
    todo = [start]
    while todo:
        i = todo.pop()
        if i in seen or i >= len(code):
            continue
        seen.add(i)
        ins = code[i]
        if ins.op in COND_JUMPS:
            return True
        if ins.op in (Op.ADD, Op.SUB, Op.AND, Op.XOR, Op.CMP):
            continue
        if ins.op in (Op.CALL, Op.RET, Op.HALT):
            continue
        if ins.op is Op.JMP:
            if isinstance(ins.imm, str) and ins.imm in labels:
                todo.append(labels[ins.imm])
            continue
        if ins.op is Op.JMPR:
            todo.extend(labels[t] for t in ins.targets if t in labels)
            continue
        todo.append(i + 1)
    return False


def _require_dead_flags(code, labels, at: int, why: str) -> None:
    if flags_live_at(code, labels, at):
        raise LiveFlags(f"line {code[min(at, len(code) - 1)].line}: flags are live where {why} "
                        "would clobber them")


def _cf_log_seq(dest: Ins) -> list[Ins]:
    return [
        _i(Op.LDI, R6, imm="CF_CUR"),
        _i(Op.MOVI, R7, imm="CF_LAST"),
        _i(Op.CMP, R7, R6),
        _i(Op.JC, imm=ABORT),
        dest,
        _i(Op.ST, R6, R7, 0),
        _i(Op.MOVI, R7, imm=2),
        _i(Op.ADD, R6, R7),
        _i(Op.STI, R6, imm="CF_CUR"),
    ]


def _static_addr(e, symbols: dict[str, int], line) -> int:
    try:
        return eval_expr(e, symbols, line)
    except AsmError:
        raise UnresolvedTarget(f"line {line}: cannot resolve store address {e!r}") from None


# --- Tiny-CFA-style pass ------------------------------------------------------------

def instrument_cfa(prog: AsmProgram, layout: LogLayout) -> AsmProgram:
    """Log every control-transfer destination to CF-Log; guard the log against stores."""
    code, labels, _ = _code_and_labels(prog)
    if not code or labels.get(ER_EXIT) != len(code) - 1 or code[-1].op is not Op.RET:
        raise InstrumentError(f"ER program must end with '{ER_EXIT}: RET'")
    if ER_ENTRY in labels:
        raise InstrumentError(f"{ER_ENTRY} is reserved")
    _check_reserved(code)
    syms = dict(PERIPH_SYMBOLS, **layout.symbols())
    prot = layout.protected
    out: list = [Label(ER_ENTRY), _i(Op.MOVI, R6, imm="CF_BASE"), _i(Op.STI, R6, imm="CF_CUR")]
    tramps: list = []
    k = -1
    for it in prog.items:
        if not isinstance(it, (Label, Ins)):
            out.append(it)
            continue
        if isinstance(it, Label):
            if it.name == ER_EXIT:
                out += [_i(Op.JMP, imm=ER_EXIT)] + tramps + [Label(ABORT), _i(Op.JMP, imm="ABORT_EXIT")]
            out.append(Label(it.name, it.line))
            continue
        k += 1
        ins = Ins(it.op, it.a, it.b, it.imm, it.targets, it.tag, it.line)
        out.append(Label(f"__o{k}"))
        if _is_internal(ins):
            out.append(ins)
            continue
        op = ins.op
        if op in (Op.JMP, Op.CALL):
            _target(ins, labels)
            if op is Op.JMP:
                _require_dead_flags(code, labels, labels[ins.imm], "a jump log")
            out += _cf_log_seq(_i(Op.MOVI, R7, imm=ins.imm)) + [ins]
        elif op in COND_JUMPS:
            tgt = _target(ins, labels)
            _require_dead_flags(code, labels, tgt, "a branch log")
            name = f"__t{k}"
            tramps += [Label(name)] + _cf_log_seq(_i(Op.MOVI, R7, imm=ins.imm)) + [_i(Op.JMP, imm=ins.imm)]
            out.append(Ins(op, imm=name, line=ins.line))
        elif op is Op.RET:
            out += _cf_log_seq(_i(Op.LD, R7, 1, 0)) + [ins]
        elif op is Op.JMPR:
            if not ins.targets:
                raise UnresolvedTarget(f"line {ins.line}: JMPR without .targets")
            for t in ins.targets:
                if t not in labels:
                    raise UnresolvedTarget(f"line {ins.line}: .targets label {t!r} undefined")
                _require_dead_flags(code, labels, labels[t], "an indirect-jump log")
            out += _cf_log_seq(_i(Op.MOV, R7, ins.a)) + [ins]
        elif op is Op.STI:
            addr = _static_addr(ins.imm, syms, ins.line)
            if addr in prot or addr + 1 in prot:
                raise DirectLogWrite(f"line {ins.line}: STI to 0x{addr:04x} targets the log area")
            out.append(ins)
        elif op is Op.ST:
            _require_dead_flags(code, labels, k, "a store range check")
            ok = f"__s{k}"
            out += [
                _i(Op.MOVI, R7, imm=ins.imm), _i(Op.ADD, R7, ins.a),
                _i(Op.MOVI, R6, imm="LOG_LO"), _i(Op.CMP, R7, R6), _i(Op.JC, imm=ok),
                _i(Op.MOVI, R6, imm="LOG_HI"), _i(Op.CMP, R7, R6), _i(Op.JC, imm=ABORT),
                Label(ok), ins,
            ]
        else:
            out.append(ins)
    return AsmProgram(out)


# --- DIALED-style pass --------------------------------------------------------------

def _il_append(value_reg: int) -> list[Ins]:
    """Append (R7 = address, value_reg) to I-Log."""
    return [
        _i(Op.STI, R7, imm="LOG_TMP"),
        _i(Op.LDI, R6, imm="IL_CUR"),
        _i(Op.MOVI, R7, imm="IL_LAST"),
        _i(Op.CMP, R7, R6),
        _i(Op.JC, imm=ABORT),
        _i(Op.LDI, R7, imm="LOG_TMP"),
        _i(Op.ST, R6, R7, 0),
        _i(Op.ST, R6, value_reg, 2),
        _i(Op.MOVI, R7, imm=4),
        _i(Op.ADD, R6, R7),
        _i(Op.STI, R6, imm="IL_CUR"),
    ]


def instrument_dfa(prog: AsmProgram, layout: LogLayout) -> AsmProgram:
    """Log every non-local load (and every IN) as an (address, value) pair to I-Log.

    A load is non-local when its effective address lies outside
    ``[SP, STACK_TOP)`` and outside the ER. Expects the output of
    :func:`instrument_cfa`.
    """
    code, labels, _ = _code_and_labels(prog)
    if ER_ENTRY not in labels or ABORT not in labels:
        raise InstrumentError("instrument_dfa expects a CFA-instrumented program")
    _check_reserved(code)
    out: list = []
    k = -1
    for it in prog.items:
        if not isinstance(it, (Label, Ins)):
            out.append(it)
            continue
        if isinstance(it, Label):
            out.append(Label(it.name, it.line))
            if it.name == ER_ENTRY:
                out += [_i(Op.MOVI, R6, imm="IL_BASE"), _i(Op.STI, R6, imm="IL_CUR")]
            continue
        k += 1
        ins = Ins(it.op, it.a, it.b, it.imm, it.targets, it.tag, it.line)
        if _is_internal(ins) or ins.op not in (Op.LD, Op.LDI, Op.IN):
            out.append(ins)
            continue
        _require_dead_flags(code, labels, k, "a load classifier")
        logged = Ins(ins.op, ins.a, ins.b, ins.imm, (), DFA_LOAD, ins.line)
        if ins.op is Op.IN:
            out += [logged, _i(Op.MOVI, R7, imm=ins.imm)] + _il_append(ins.a)
            continue
        nl, log, loc, done = f"__dn{k}", f"__dl{k}", f"__dc{k}", f"__dd{k}"
        if ins.op is Op.LD:
            ea = [_i(Op.MOVI, R7, imm=ins.imm), _i(Op.ADD, R7, ins.b)]
        else:
            ea = [_i(Op.MOVI, R7, imm=ins.imm)]
        out += ea + [
            _i(Op.CMP, R7, 1), _i(Op.JC, imm=nl),
            _i(Op.MOVI, R6, imm="STACK_TOP"), _i(Op.CMP, R7, R6), _i(Op.JC, imm=loc),
            Label(nl),
            _i(Op.MOVI, R6, imm=ER_ENTRY), _i(Op.CMP, R7, R6), _i(Op.JC, imm=log),
            _i(Op.MOVI, R6, imm=ER_END), _i(Op.CMP, R7, R6), _i(Op.JC, imm=loc),
            Label(log), logged,
        ] + _il_append(ins.a) + [
            _i(Op.JMP, imm=done),
            Label(loc), Ins(ins.op, ins.a, ins.b, ins.imm, (), INTERNAL, ins.line),
            Label(done),
        ]
    out.append(Label(ER_END))
    return AsmProgram(out)


# --- overhead -----------------------------------------------------------------------

def overhead_pct(base: float, new: float) -> float:
    """Relative increase in percent; 0 when both are 0."""
    if base == 0:
        return 0.0 if new == 0 else float("inf")
    return 100.0 * (new - base) / base


@dataclass(frozen=True)
class OverheadRow:
    program: str
    variant: str
    size_orig: int
    size_instr: int
    cycles_orig: float
    cycles_instr: float

    @property
    def size_pct(self) -> float:
        return overhead_pct(self.size_orig, self.size_instr)

    @property
    def cycles_pct(self) -> float:
        return overhead_pct(self.cycles_orig, self.cycles_instr)

    def to_dict(self) -> dict:
        return {"program": self.program, "variant": self.variant,
                "size_orig": self.size_orig, "size_instr": self.size_instr,
                "size_pct": round(self.size_pct, 2),
                "cycles_orig": self.cycles_orig, "cycles_instr": self.cycles_instr,
                "cycles_pct": round(self.cycles_pct, 2)}


def measure_overhead(orig, instr, inputs: list[list[int]], name: str = "program",
                     variant: str = "instrumented") -> OverheadRow:
    """Code size of the two ERs and their mean ER cycle count over ``inputs``.

    ``orig`` and ``instr`` are :class:`~mcuproof.firmware.Firmware` builds of
    the same application.
    """
    from .firmware import run_er

    if not inputs:
        inputs = [[]]
    c0 = [run_er(orig, v).cycles for v in inputs]
    c1 = [run_er(instr, v).cycles for v in inputs]
    return OverheadRow(name, variant, orig.er_size, instr.er_size,
                       sum(c0) / len(c0), sum(c1) / len(c1))


def aggregate_overhead(rows: list[OverheadRow]) -> list[OverheadRow]:
    """One ``all`` row per variant: summed ER sizes, summed mean cycle counts."""
    out = []
    for variant in dict.fromkeys(r.variant for r in rows):
        rs = [r for r in rows if r.variant == variant]
        out.append(OverheadRow("all", variant, sum(r.size_orig for r in rs),
                               sum(r.size_instr for r in rs), sum(r.cycles_orig for r in rs),
                               sum(r.cycles_instr for r in rs)))
    return out


def format_overhead(rows: list[OverheadRow]) -> str:
    head = f"{'program':<12}{'variant':<10}{'size':>7}{'size+%':>9}{'cycles':>10}{'cycles+%':>10}"
    lines = [head]
    for r in rows:
        lines.append(f"{r.program:<12}{r.variant:<10}{r.size_instr:>7}{r.size_pct:>9.1f}"
                     f"{r.cycles_instr:>10.1f}{r.cycles_pct:>10.1f}")
    return "\n".join(lines) + "\n"
