"""Hardware monitors: VRASED, RATA (variants A and B) and APEX.

Each monitor is a pure transition function over :class:`BusSignals`
observed *before* the step's memory effects commit. The :class:`MonitorBank`
composes the enabled monitors in a fixed order and reports violations; the
emulator answers any violation with a reset.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

from .bus import Agent, BusSignals
from .memmap import (DEFAULT_MAP, ER_MAX, ER_MIN, EXEC, LMT_LEN, OR_MAX, OR_MIN,
                     MemoryMap, Region)


class Violation(str, enum.Enum):
    KEY_ACCESS = "KeyAccess"
    SWATT_INTERRUPT = "SwAttInterrupt"
    SWATT_ATOMICITY = "SwAttNonAtomicEntryOrExit"
    LMT_WRITE = "LmtWrite"
    DMA_DURING_PROTECTED = "DmaDuringProtected"


# --- VRASED --------------------------------------------------------------------

@dataclass(frozen=True)
class VrasedConfig:
    k_region: Region
    swatt_region: Region
    entry: int
    exit: int

    @classmethod
    def from_map(cls, mmap: MemoryMap) -> "VrasedConfig":
        sw = mmap.swatt_region
        return cls(mmap.k_region, sw, sw.start, sw.end - 2)


@dataclass(frozen=True)
class VrasedState:
    in_swatt: bool = False
    last_pc: int | None = None


def vrased_check(sig: BusSignals, st: VrasedState,
                 cfg: VrasedConfig) -> tuple[VrasedState, tuple[Violation, ...]]:
    found: list[Violation] = []
    inside = sig.pc in cfg.swatt_region
    for acc in sig.accesses:
        if acc.addr in cfg.k_region and (acc.agent is Agent.DMA or not inside):
            found.append(Violation.KEY_ACCESS)
        if acc.agent is Agent.DMA and inside:
            found.append(Violation.DMA_DURING_PROTECTED)
    if sig.irq and inside:
        found.append(Violation.SWATT_INTERRUPT)
    if inside and not st.in_swatt and sig.pc != cfg.entry:
        found.append(Violation.SWATT_ATOMICITY)
    if not inside and st.in_swatt and st.last_pc != cfg.exit:
        found.append(Violation.SWATT_ATOMICITY)
    return VrasedState(inside, sig.pc), tuple(dict.fromkeys(found))


# --- RATA ----------------------------------------------------------------------

@dataclass(frozen=True)
class RataState:
    variant: str = "B"
    lmt: bytes = bytes(LMT_LEN)
    pmem_modified_latch: bool = False


def encode_time(t: int) -> bytes:
    """RTC timestamp zero-padded into the 16-byte LMT field."""
    return (t & (2**64 - 1)).to_bytes(8, "little") + bytes(8)


def decode_time(lmt: bytes) -> int:
    return int.from_bytes(lmt[:8], "little")


def rata_update(sig: BusSignals, st: RataState, chal_region_bytes: bytes, rtc_value: int,
                lmt_region: Region, swatt_entry: int) -> tuple[RataState, tuple[Violation, ...]]:
    found: tuple[Violation, ...] = ()
    if any(a.addr in lmt_region for a in sig.writes()):
        found = (Violation.LMT_WRITE,)
    if st.variant == "A":
        if sig.pmem_write:
            st = replace(st, lmt=encode_time(rtc_value))
        return st, found
    if sig.pmem_write:
        st = replace(st, pmem_modified_latch=True)
    if sig.pc == swatt_entry and st.pmem_modified_latch:
        st = replace(st, lmt=bytes(chal_region_bytes), pmem_modified_latch=False)
    return st, found


# --- APEX ----------------------------------------------------------------------

class Phase(str, enum.Enum):
    IDLE = "idle"
    EXECUTING = "executing"
    EXECUTED = "executed"


@dataclass(frozen=True)
class ApexConfig:
    """Metadata registers; ER and OR are inclusive word-address ranges."""

    er_min: int = 0
    er_max: int = 0
    or_min: int = 0
    or_max: int = 0

    @classmethod
    def from_memory(cls, mem) -> "ApexConfig":
        def w(a: int) -> int:
            return mem[a] | (mem[a + 1] << 8)
        return cls(w(ER_MIN), w(ER_MAX), w(OR_MIN), w(OR_MAX))

    def valid(self, mmap: MemoryMap = DEFAULT_MAP) -> bool:
        if not (self.er_min <= self.er_max and self.or_min <= self.or_max):
            return False
        if self.er_min < mmap.pmem.start or self.er_max + 2 > mmap.pmem.end:
            return False
        if self.or_min < mmap.dmem.start or self.or_max + 2 > mmap.dmem.end:
            return False
        return not (self.er_min & 1 or self.er_max & 1 or self.or_min & 1 or self.or_max & 1)

    def in_er(self, addr: int | None) -> bool:
        return addr is not None and self.er_min <= addr <= self.er_max

    def er_bytes(self) -> Region:
        return Region(self.er_min, self.er_max + 2 - self.er_min)

    def or_bytes(self) -> Region:
        return Region(self.or_min, self.or_max + 2 - self.or_min)


@dataclass(frozen=True)
class ApexState:
    exec: int = 0
    phase: Phase = Phase.IDLE
    last_pc: int | None = None


def apex_update(sig: BusSignals, st: ApexState, cfg: ApexConfig,
                mmap: MemoryMap = DEFAULT_MAP) -> ApexState:
    if not cfg.valid(mmap):
        return ApexState(0, Phase.IDLE, sig.pc)
    phase, exec_ = st.phase, st.exec
    in_er = cfg.in_er(sig.pc)
    was_in = cfg.in_er(st.last_pc)

    if phase is Phase.EXECUTING:
        if not in_er:
            if st.last_pc == cfg.er_max:
                phase, exec_ = Phase.EXECUTED, 1
            else:
                phase, exec_ = Phase.IDLE, 0
    elif in_er and not was_in:
        if sig.pc == cfg.er_min:
            phase, exec_ = Phase.EXECUTING, 0
        else:
            phase, exec_ = Phase.IDLE, 0

    def clear():
        return Phase.IDLE, 0

    if phase is Phase.EXECUTING and sig.irq:
        phase, exec_ = clear()
    er, orr = cfg.er_bytes(), cfg.or_bytes()
    for acc in sig.accesses:
        if phase is Phase.EXECUTING and acc.agent is Agent.DMA:
            phase, exec_ = clear()
        if not acc.is_write:
            continue
        if EXEC <= acc.addr < OR_MAX + 2:
            phase, exec_ = clear()
        elif acc.addr in er:
            phase, exec_ = clear()
        elif phase is Phase.EXECUTED and acc.addr in orr:
            phase, exec_ = clear()
        elif phase is Phase.EXECUTING and acc.addr in mmap.dmem and not in_er:
            phase, exec_ = clear()
    return ApexState(exec_, phase, sig.pc)


# --- bank ----------------------------------------------------------------------

@dataclass
class Evidence:
    cycle: int
    violations: tuple[Violation, ...]
    signal: BusSignals

    def to_dict(self) -> dict:
        return {"cycle": self.cycle, "violations": [v.value for v in self.violations],
                "signal": self.signal.to_dict()}


@dataclass
class MonitorBank:
    """Enabled monitors and their state. ``rata`` is None, "A" or "B"."""

    mmap: MemoryMap = DEFAULT_MAP
    vrased: bool = False
    rata: str | None = None
    apex: bool = False
    vrased_state: VrasedState = field(default_factory=VrasedState)
    rata_state: RataState = field(default_factory=RataState)
    apex_state: ApexState = field(default_factory=ApexState)
    evidence: list[Evidence] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.vcfg = VrasedConfig.from_map(self.mmap)
        if self.rata is not None:
            if self.rata not in ("A", "B"):
                raise ValueError(f"unknown RATA variant {self.rata!r}")
            self.rata_state = replace(self.rata_state, variant=self.rata)

    @classmethod
    def for_arch(cls, features, mmap: MemoryMap = DEFAULT_MAP) -> "MonitorBank":
        f = set(features)
        rata = "A" if "rata_a" in f else "B" if "rata_b" in f else None
        apex = bool(f & {"apex", "tinycfa", "dialed"})
        vrased = apex or rata is not None or "vrased" in f
        return cls(mmap, vrased=vrased, rata=rata, apex=apex)

    @property
    def lmt(self) -> bytes:
        return self.rata_state.lmt

    @property
    def exec(self) -> int:
        return self.apex_state.exec if self.apex else 0

    def step(self, sig: BusSignals, mem) -> tuple[Violation, ...]:
        """Run enabled monitors on ``sig``; commit their state unless violated.

        ``mem`` is the pre-commit memory, used to read the challenge and the
        APEX metadata registers.
        """
        found: list[Violation] = []
        v_state, r_state, a_state = self.vrased_state, self.rata_state, self.apex_state
        if self.vrased:
            v_state, v = vrased_check(sig, v_state, self.vcfg)
            found.extend(v)
        if self.rata is not None:
            chal = bytes(mem[self.mmap.chal.start:self.mmap.chal.end])
            r_state, v = rata_update(sig, r_state, chal, sig.cycle, self.mmap.lmt,
                                     self.vcfg.entry)
            found.extend(v)
        if self.apex:
            a_state = apex_update(sig, a_state, ApexConfig.from_memory(mem), self.mmap)
        if found:
            self.evidence.append(Evidence(sig.cycle, tuple(found), sig))
            return tuple(found)
        self.vrased_state, self.rata_state, self.apex_state = v_state, r_state, a_state
        return ()

    def on_reset(self) -> None:
        """Volatile monitor state restarts; LMT and the RATA latch persist."""
        self.vrased_state = VrasedState()
        self.apex_state = ApexState()
