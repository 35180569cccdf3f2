"""Integrity-ensuring function: the ROM-resident SW-Att stub and its MAC.

The stub runs *inside* the emulator: its entry, one read step per attested
word, and its exit are ordinary bus steps that the monitors observe. The MAC
arithmetic itself (HMAC-SHA-256) is computed host-side over the canonical
encoding of challenge, scope, EXEC, LMT and the bytes the sweep read.

Cost model: ``C_FIXED + C_WORD * words`` cycles per attestation.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import struct
from dataclasses import dataclass

from . import isa
from .bus import Kind, MemAccess
from .memmap import ATT_OUT, CHAL_LEN, LMT_LEN, MemoryMap
from .monitors import ApexConfig, Violation

C_FIXED = 2000
C_WORD = 4
C_ENTRY = C_FIXED // 2
C_EXIT = C_FIXED - C_ENTRY
MAC_LEN = 32


class AbortedByReset(RuntimeError):
    def __init__(self, violations: tuple[Violation, ...] = ()):
        self.violations = violations
        names = ", ".join(v.value for v in violations) or "reset"
        super().__init__(f"attestation aborted by reset ({names})")


class EncodingError(ValueError):
    pass


class Mode(str, enum.Enum):
    FULL_PMEM = "full_pmem"
    LMT_ONLY = "lmt_only"
    POX = "pox"


MODE_CODES = {Mode.FULL_PMEM: 1, Mode.LMT_ONLY: 2, Mode.POX: 3}
CODE_MODES = {v: k for k, v in MODE_CODES.items()}


@dataclass(frozen=True)
class Challenge:
    """16-byte challenge: big-endian u64 counter followed by an 8-byte nonce."""

    counter: int
    nonce: bytes = bytes(8)

    def __bytes__(self) -> bytes:
        return self.counter.to_bytes(8, "big") + self.nonce

    @classmethod
    def from_bytes(cls, b: bytes) -> "Challenge":
        if len(b) != CHAL_LEN:
            raise EncodingError(f"challenge must be {CHAL_LEN} bytes")
        return cls(int.from_bytes(b[:8], "big"), bytes(b[8:]))


@dataclass(frozen=True)
class AttScope:
    mode: Mode
    regions: tuple[tuple[int, int], ...] = ()
    includes_exec: bool = False

    @classmethod
    def full_pmem(cls, mmap: MemoryMap) -> "AttScope":
        return cls(Mode.FULL_PMEM, ((mmap.pmem.start, mmap.pmem.length),))

    @classmethod
    def lmt_only(cls, mmap: MemoryMap) -> "AttScope":
        return cls(Mode.LMT_ONLY, ((mmap.lmt.start, mmap.lmt.length),))

    @classmethod
    def pox(cls, cfg: ApexConfig, mmap: MemoryMap) -> "AttScope":
        er, orr = cfg.er_bytes(), cfg.or_bytes()
        return cls(Mode.POX, ((mmap.meta.start + 2, mmap.meta.length - 2),
                              (er.start, er.length), (orr.start, orr.length),
                              (mmap.lmt.start, mmap.lmt.length)), True)

    @property
    def words(self) -> int:
        return sum((n + 1) // 2 for _, n in self.regions)

    def encode(self) -> bytes:
        out = struct.pack("<BBH", MODE_CODES[self.mode], int(self.includes_exec), len(self.regions))
        for start, n in self.regions:
            out += struct.pack("<HI", start, n)
        return out

    @classmethod
    def decode(cls, buf: bytes, offset: int = 0) -> tuple["AttScope", int]:
        try:
            code, inc, n = struct.unpack_from("<BBH", buf, offset)
            offset += 4
            regions = []
            for _ in range(n):
                start, length = struct.unpack_from("<HI", buf, offset)
                regions.append((start, length))
                offset += 6
        except struct.error:
            raise EncodingError("truncated scope") from None
        if code not in CODE_MODES or inc > 1:
            raise EncodingError("bad scope header")
        return cls(CODE_MODES[code], tuple(regions), bool(inc)), offset


@dataclass(frozen=True)
class AttReport:
    mac: bytes
    exec: int
    lmt: bytes
    or_bytes: bytes
    scope: AttScope
    chal: bytes


def canonical_encode(chal: bytes, scope: AttScope, exec_: int, lmt: bytes,
                     regions: list[bytes]) -> bytes:
    """``chal || scope || exec || lmt || (u32 len || bytes)*``, all lengths explicit."""
    if len(chal) != CHAL_LEN or len(lmt) != LMT_LEN:
        raise EncodingError("challenge and LMT must be 16 bytes")
    if len(regions) != len(scope.regions):
        raise EncodingError("region data does not match scope")
    out = bytearray(chal)
    out += scope.encode()
    out.append(exec_ & 1)
    out += lmt
    for (_, n), data in zip(scope.regions, regions):
        if len(data) != n:
            raise EncodingError(f"region length {len(data)} != declared {n}")
        out += struct.pack("<I", n) + data
    return bytes(out)


def canonical_decode(buf: bytes) -> tuple[bytes, AttScope, int, bytes, list[bytes]]:
    if len(buf) < CHAL_LEN:
        raise EncodingError("truncated challenge")
    chal = bytes(buf[:CHAL_LEN])
    scope, off = AttScope.decode(buf, CHAL_LEN)
    if off + 1 + LMT_LEN > len(buf):
        raise EncodingError("truncated exec/lmt")
    exec_ = buf[off]
    if exec_ > 1:
        raise EncodingError("exec must be 0 or 1")
    lmt = bytes(buf[off + 1:off + 1 + LMT_LEN])
    off += 1 + LMT_LEN
    regions = []
    for _, n in scope.regions:
        if off + 4 > len(buf):
            raise EncodingError("truncated region length")
        (m,) = struct.unpack_from("<I", buf, off)
        if m != n or off + 4 + m > len(buf):
            raise EncodingError("region length mismatch")
        regions.append(bytes(buf[off + 4:off + 4 + m]))
        off += 4 + m
    if off != len(buf):
        raise EncodingError("trailing bytes")
    return chal, scope, exec_, lmt, regions


def compute_mac(key: bytes, message: bytes) -> bytes:
    return hmac.new(key, message, hashlib.sha256).digest()


class SwAtt:
    """Micro-stepped SW-Att: entry, one read per attested word, exit.

    Only takes over when the PC sits at the address its current phase
    expects; anything else (e.g. a jump into the middle) executes the ROM
    bytes as ordinary instructions and is left to the monitors.
    """

    def __init__(self, mcu):
        self.mcu = mcu
        sw = mcu.mmap.swatt_region
        self.entry, self.sweep, self.exit = sw.start, sw.start + 2, sw.end - 2
        self.scope: AttScope | None = None
        self.abort()

    def request(self, scope: AttScope | None) -> None:
        self.scope = scope

    def abort(self) -> None:
        self.phase = "idle"
        self.words: list[int] = []
        self.collected: list[int] = []
        self.active_scope: AttScope | None = None
        self.refused = False
        self.chal = bytes(CHAL_LEN)

    @property
    def busy(self) -> bool:
        return self.phase != "idle"

    def _validate(self, scope: AttScope) -> bool:
        m = self.mcu.mmap
        for start, n in scope.regions:
            if n <= 0 or start & 1 or not m.range_mapped(start, n + (n & 1)):
                return False
            if m.k_region.overlaps(start, n):
                return False
        return True

    def plan(self):
        from .mcu import Plan

        mcu = self.mcu
        st = mcu.state
        pc = st.pc
        if pc == self.entry and self.phase == "idle":
            scope = self.scope or AttScope.full_pmem(mcu.mmap)
            ok = self._validate(scope)
            words = [s + 2 * i for s, n in scope.regions for i in range((n + 1) // 2)] if ok else []
            plan = Plan(pc=self.sweep if words else self.exit, cost=C_ENTRY)
            chal_region = mcu.mmap.chal

            def begin() -> None:
                self.phase = "sweep" if words else "exit"
                self.words, self.collected = words, []
                self.active_scope, self.refused = scope, not ok
                self.chal = bytes(st.mem[chal_region.start:chal_region.end])
            plan.post.append(begin)
            return plan
        if pc == self.sweep and self.phase == "sweep":
            addr = self.words[len(self.collected)]
            last = len(self.collected) + 1 == len(self.words)
            plan = Plan(pc=self.exit if last else self.sweep, cost=C_WORD)
            v = mcu.read(addr, plan)
            plan.accesses = (MemAccess(addr, Kind.READ),)

            def take() -> None:
                self.collected.append(v)
                if last:
                    self.phase = "exit"
            plan.post.append(take)
            return plan
        if pc == self.exit and self.phase == "exit":
            slot = mcu._stack_addr(st.sp)
            plan = Plan(pc=st.word(slot), cost=C_EXIT)
            plan.accesses = (MemAccess(ATT_OUT, Kind.WRITE), MemAccess(slot, Kind.READ))
            plan.regs[isa.SP] = slot + 2

            def finish() -> None:
                st.att_out = None if self.refused else self._report()
                self.abort()
                self.scope = None
            plan.post.append(finish)
            return plan
        return None

    def _report(self) -> AttReport:
        scope = self.active_scope
        assert scope is not None
        raw = b"".join(w.to_bytes(2, "little") for w in self.collected)
        regions, off = [], 0
        for _, n in scope.regions:
            regions.append(raw[off:off + n])
            off += n + (n & 1)
        bank = self.mcu.bank
        exec_, lmt = bank.exec, bank.lmt
        msg = canonical_encode(self.chal, scope, exec_, lmt, regions)
        k = self.mcu.mmap.k_region
        key = bytes(self.mcu.state.mem[k.start:k.end])
        or_bytes = regions[2] if scope.mode is Mode.POX else b""
        return AttReport(compute_mac(key, msg), exec_, lmt, or_bytes, scope, self.chal)


def write_challenge(mcu, chal: bytes) -> None:
    c = mcu.mmap.chal
    mcu.state.mem[c.start:c.end] = chal


def ief_run(mcu, chal: bytes, scope: AttScope, return_pc: int | None = None,
            hook=None, max_steps: int = 1_000_000) -> tuple[AttReport, int]:
    """Write ``chal``, vector into SW-Att and run it to completion.

    ``hook(mcu, i)`` is called before each step so callers can inject
    interrupts or DMA at any cycle of the sweep.

    Returns:
        The report and the cycles spent.

    Raises:
        AbortedByReset: a monitor fired during the attestation.
    """
    write_challenge(mcu, bytes(chal))
    mcu.swatt.request(scope)
    mcu.vector_to_swatt(mcu.state.pc if return_pc is None else return_pc)
    mcu.state.att_out = None
    start = mcu.state.cycles
    for i in range(max_steps):
        if hook is not None:
            hook(mcu, i)
        res = mcu.step()
        if res.reset:
            raise AbortedByReset(res.violations)
        if res.fault:
            raise RuntimeError(res.fault)
        if not mcu.swatt.busy and mcu.state.pc not in mcu.mmap.swatt_region:
            break
    else:
        raise RuntimeError("SW-Att did not finish")
    report = mcu.state.att_out
    if report is None:
        raise RuntimeError("SW-Att refused the requested scope")
    return report, mcu.state.cycles - start


def cost(words: int) -> int:
    return C_FIXED + C_WORD * words

