"""Prover firmware: a small dispatcher in PMEM plus the application ER.

PMEM layout::

    0x1000  start       boot-time init, falls into main
            main        idle loop
            run_attest  run the ER, then call SW-Att
            attest      call SW-Att only
            run_only    run the ER, back to main
    0x1800  er_entry .. er_max   (application, optionally instrumented)

Architectures are named by the columns of the detection matrix; each maps
to a feature set for :meth:`MonitorBank.for_arch` and to an ER build.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

from . import instrument as ins_mod
from .asm import AsmProgram, Assembled, Ins, Label, Org, assemble, parse
from .bus import BusSignals
from .instrument import (ER_ENTRY, CodeTooLargeForEr, LogLayout, er_program, instrument_cfa,
                         instrument_dfa, plain_er)
from .mcu import DEFAULT_KEY, Mcu
from .memmap import DEFAULT_MAP, MemoryMap
from .monitors import ApexConfig, MonitorBank

ER_BASE = 0x1800
CFG_LIMIT = 0x3A00
APPS = ("threshold", "pump", "ranger")

ARCHS: dict[str, frozenset[str]] = {
    "baseline": frozenset(),
    "vrased": frozenset({"vrased"}),
    "apex": frozenset({"vrased", "apex"}),
    "tinycfa": frozenset({"vrased", "apex", "tinycfa"}),
    "dialed": frozenset({"vrased", "apex", "tinycfa", "dialed"}),
    "rata": frozenset({"vrased", "rata_b"}),
}
FEATURES = ("baseline", "vrased", "rata_a", "rata_b", "apex", "tinycfa", "dialed")

DISPATCHER = """
.org 0x1000
start:
    MOVI R2, 400
    STI [CFG_LIMIT], R2
main:
    NOP
    JMP main
run_attest:
    MOVI R1, STACK_TOP
    CALL er_entry
ret_site:
    CALL SWATT_ENTRY
    JMP main
attest:
    MOVI R1, STACK_TOP
    CALL SWATT_ENTRY
    JMP main
run_only:
    MOVI R1, STACK_TOP
    CALL er_entry
    JMP main
"""


class FeatureError(ValueError):
    pass


def check_features(features) -> frozenset[str]:
    """Validate a feature set: apex needs vrased, tinycfa needs apex, dialed needs tinycfa."""
    f = frozenset(features) - {"baseline"}
    unknown = f - set(FEATURES)
    if unknown:
        raise FeatureError(f"unknown features: {sorted(unknown)}")
    for need, has in (("vrased", "apex"), ("vrased", "rata_a"), ("vrased", "rata_b"),
                      ("apex", "tinycfa"), ("tinycfa", "dialed")):
        if has in f and need not in f:
            raise FeatureError(f"{has} requires {need}")
    if {"rata_a", "rata_b"} <= f:
        raise FeatureError("rata_a and rata_b are exclusive")
    return f


def verification_kind(features) -> str:
    f = frozenset(features)
    for feat, kind in (("dialed", "dfa"), ("tinycfa", "cfa"), ("apex", "pox"),
                       ("rata_a", "rata"), ("rata_b", "rata")):
        if feat in f:
            return kind
    return "ra"


def app_source(name: str) -> str:
    if name not in APPS:
        raise KeyError(f"unknown app {name!r}; choose from {APPS}")
    return resources.files("mcuproof.apps").joinpath(f"{name}.s").read_text()


@dataclass
class Firmware:
    features: frozenset[str]
    app: AsmProgram
    er_original: AsmProgram
    er: AsmProgram
    program: AsmProgram
    assembled: Assembled
    image: bytes
    layout: LogLayout
    mmap: MemoryMap
    name: str = "app"
    er_cfg: ApexConfig = field(init=False)

    def __post_init__(self) -> None:
        s = self.assembled
        er_items = [a for it, a in zip(s.program.items, s.addrs)
                    if a is not None and a >= ER_BASE and not isinstance(it, Label)]
        er_max = max(er_items)
        self.er_cfg = ApexConfig(s.symbols[ER_ENTRY], er_max, self.layout.or_min, self.layout.or_max)

    @property
    def symbols(self) -> dict[str, int]:
        return self.assembled.symbols

    def sym(self, name: str) -> int:
        return self.assembled.symbols[name]

    @property
    def er_size(self) -> int:
        return self.er_cfg.er_bytes().length

    @property
    def er_bytes(self) -> bytes:
        r = self.er_cfg.er_bytes()
        off = r.start - self.mmap.pmem.start
        return self.image[off:off + r.length]

    @property
    def instrumented(self) -> bool:
        return "tinycfa" in self.features

    @property
    def return_site(self) -> int:
        return self.sym("ret_site")

    def origin_index(self) -> dict[int, int]:
        """ER address -> index of the original ER instruction that starts there."""
        if self.instrumented:
            return {a: int(n[3:]) for n, a in self.symbols.items()
                    if n.startswith("__o") and n[3:].isdigit()}
        s = self.assembled
        addrs = [a for it, a in zip(s.program.items, s.addrs)
                 if isinstance(it, Ins) and a is not None and a >= ER_BASE]
        return {a: k for k, a in enumerate(addrs)}

    def origin_addr(self) -> dict[int, int]:
        return {k: a for a, k in self.origin_index().items()}


def firmware_symbols(layout: LogLayout, mmap: MemoryMap) -> dict[str, int]:
    syms = layout.symbols()
    syms.update(STACK_TOP=mmap.stack_top, CFG_LIMIT=CFG_LIMIT, ABORT_EXIT=0)
    return syms


def build_firmware(app: str | AsmProgram, features=(), mmap: MemoryMap = DEFAULT_MAP,
                   layout: LogLayout | None = None, name: str | None = None) -> Firmware:
    """Assemble dispatcher + ER for ``features`` (a feature set or an arch name)."""
    if isinstance(features, str):
        features = ARCHS[features]
    feats = check_features(features)
    if isinstance(app, str):
        if app in APPS:
            name = name or app
            app = app_source(app)
        app = parse(app)
    layout = layout or LogLayout()
    er0 = er_program(app)
    if "tinycfa" in feats:
        er = instrument_cfa(er0, layout)
        if "dialed" in feats:
            er = instrument_dfa(er, layout)
    else:
        er = plain_er(er0)
    program = AsmProgram(parse(DISPATCHER).items + [Org(ER_BASE)] + er.items)
    syms = firmware_symbols(layout, mmap)
    first = assemble(program, mmap.pmem.start, syms)
    syms["ABORT_EXIT"] = first.symbols["attest"]  # still report, with EXEC cleared
    assembled = assemble(program, mmap.pmem.start, syms)
    end = max(a + len(s) for a, s in assembled.segments.items())
    if end > mmap.pmem.end:
        raise CodeTooLargeForEr(f"ER ends at 0x{end:04x}, past PMEM end 0x{mmap.pmem.end:04x}")
    image = assembled.image(mmap.pmem.start, mmap.pmem.length)
    return Firmware(feats, app, er0, er, program, assembled, image, layout, mmap, name or "app")


def write_metadata(mcu: Mcu, cfg: ApexConfig, agent=None) -> None:
    """Program ER/OR bounds the way firmware would: as core stores, seen by APEX."""
    from .bus import Agent
    from .memmap import ER_MIN

    mcu.external_write(ER_MIN, [cfg.er_min, cfg.er_max, cfg.or_min, cfg.or_max],
                       agent or Agent.CORE)


def boot(fw: Firmware, bank: MonitorBank | None = None, key: bytes = DEFAULT_KEY,
         trace: bool = False, max_steps: int = 1000) -> Mcu:
    """Load ``fw`` and run its init code until the idle loop."""
    mcu = Mcu(fw.mmap, bank, key, trace)
    mcu.load(fw.image)
    main = fw.sym("main")
    mcu.run(max_steps, until=lambda m: m.state.pc == main)
    return mcu


@dataclass
class ErRun:
    cycles: int
    output: bytes
    or_bytes: bytes
    trace: list[BusSignals] | None
    mcu: Mcu


def run_er(fw: Firmware, inputs, max_steps: int = 200_000, trace: bool = False) -> ErRun:
    """Run the ER once on ``inputs`` (no monitors); cycles cover CALL..return."""
    mcu = boot(fw)
    mcu.feed_input(inputs)
    write_metadata(mcu, fw.er_cfg)
    if trace:
        mcu.trace = []
    main = fw.sym("main")
    mcu.state.pc = fw.sym("run_only")
    start = mcu.state.cycles
    mcu.step()
    mcu.run(max_steps, until=lambda m: m.state.pc == main)
    orr = fw.layout.region
    data = bytes(mcu.state.mem[orr.start:orr.end])
    return ErRun(mcu.state.cycles - start, data[:fw.layout.output.length], data, mcu.trace, mcu)


def transfer_trace(fw: Firmware, run: ErRun) -> list[int]:
    """Ground truth: destinations of every taken application transfer in the trace.

    Meant for uninstrumented builds, where every ER transfer is an
    application transfer.
    """
    assert run.trace is not None
    im = fw.assembled.instruction_map()
    er = fw.er_cfg
    out = []
    for s0, s1 in zip(run.trace, run.trace[1:]):
        if not er.in_er(s0.pc) or s0.pc not in im:
            continue
        src, ins = im[s0.pc]
        if not ins.is_transfer or src.tag in (ins_mod.INTERNAL, ins_mod.DFA_LOAD):
            continue
        if ins.op.name in ("JZ", "JNZ", "JC") and s1.pc == s0.pc + ins.size:
            continue
        out.append(s1.pc)
    return out
