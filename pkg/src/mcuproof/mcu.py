"""Deterministic, cycle-counted emulator of a low-end MCU.

A step is one of: a DMA word transfer, an interrupt entry, or one core
instruction (arbitration is fixed: DMA > irq > core). Every step is first
*planned* without side effects; its :class:`~mcuproof.bus.BusSignals` go to
the monitor bank, and only if no monitor objects are the register and memory
effects committed. A violation discards the plan and resets the machine.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable

from . import isa
from .bus import Agent, BusSignals, Kind, MemAccess
from .isa import Op
from .memmap import (ATT_OUT, BOOT_VECTOR, DEFAULT_MAP, DMA_CTL, DMA_DST, DMA_LEN, DMA_SRC,
                     EXEC, GPIO_IN, GPIO_OUT, IRQ_CTL, IRQ_VEC, ISR_STUB, RTC, MemoryMap)
from .monitors import MonitorBank, Violation

DEFAULT_KEY = bytes([0x0B]) * 32


class ImageTooLarge(ValueError):
    pass


class DmaRangeError(ValueError):
    pass


class MachineHalted(RuntimeError):
    pass


class Fault(Exception):
    """Architectural fault inside a step; halts the machine (not a reset)."""


@dataclass
class DmaConfig:
    src: int = 0
    dst: int = 0
    remaining: int = 0
    active: bool = False


@dataclass
class McuState:
    regs: list[int] = field(default_factory=lambda: [0] * 8)
    mem: bytearray = field(default_factory=lambda: bytearray(0x10000))
    cycles: int = 0
    zero: bool = False
    carry: bool = False
    irq_pending: bool = False
    dma: DmaConfig = field(default_factory=DmaConfig)
    halted: bool = False
    fault: str | None = None
    inputs: list[int] = field(default_factory=list)
    input_pos: int = 0
    gpio_out: list[int] = field(default_factory=list)
    att_out: object = None
    resets: int = 0

    @property
    def pc(self) -> int:
        return self.regs[isa.PC]

    @pc.setter
    def pc(self, v: int) -> None:
        self.regs[isa.PC] = v & 0xFFFF

    @property
    def sp(self) -> int:
        return self.regs[isa.SP]

    @sp.setter
    def sp(self, v: int) -> None:
        self.regs[isa.SP] = v & 0xFFFF

    def word(self, addr: int) -> int:
        return self.mem[addr] | (self.mem[addr + 1] << 8)

    def set_word(self, addr: int, v: int) -> None:
        self.mem[addr] = v & 0xFF
        self.mem[addr + 1] = (v >> 8) & 0xFF

    def copy(self) -> "McuState":
        return copy.deepcopy(self)


@dataclass
class StepResult:
    signals: BusSignals | None
    reset: bool = False
    violations: tuple[Violation, ...] = ()
    fault: str | None = None


@dataclass
class Plan:
    """Uncommitted effects of one step."""

    pc: int
    cost: int
    accesses: tuple[MemAccess, ...] = ()
    writes: list[tuple[int, int]] = field(default_factory=list)
    regs: dict[int, int] = field(default_factory=dict)
    flags: tuple[bool, bool] | None = None
    irq: bool = False
    halt: bool = False
    post: list[Callable[[], None]] = field(default_factory=list)
    agent: Agent = Agent.CORE


def build_rom(mmap: MemoryMap, key: bytes) -> bytes:
    """Boot code, default interrupt handler, SW-Att stub placeholder and K."""
    rom = bytearray(mmap.rom.length)

    def put(addr: int, ins: isa.Instruction) -> None:
        code = isa.encode(ins)
        rom[addr - mmap.rom.start:addr - mmap.rom.start + len(code)] = code

    put(BOOT_VECTOR, isa.Instruction(Op.JMP, imm=mmap.pmem.start))
    put(ISR_STUB, isa.Instruction(Op.RET))
    sw = mmap.swatt_region
    for a in range(sw.start, sw.end - 2, 2):
        put(a, isa.Instruction(Op.NOP))
    put(sw.end - 2, isa.Instruction(Op.RET))
    if len(key) != mmap.k_region.length:
        raise ValueError(f"key must be {mmap.k_region.length} bytes")
    k0 = mmap.k_region.start - mmap.rom.start
    rom[k0:k0 + len(key)] = key
    return bytes(rom)


def load_program(image: bytes, mmap: MemoryMap = DEFAULT_MAP, key: bytes = DEFAULT_KEY) -> McuState:
    """Fresh state with ``image`` at the start of pmem, PC at pmem start."""
    if len(image) > mmap.pmem.length:
        raise ImageTooLarge(f"image of {len(image)} bytes exceeds pmem ({mmap.pmem.length})")
    st = McuState()
    st.mem[mmap.rom.start:mmap.rom.end] = build_rom(mmap, key)
    st.mem[mmap.pmem.start:mmap.pmem.start + len(image)] = image
    _reset_periph(st)
    st.pc = mmap.pmem.start
    st.sp = mmap.stack_top
    return st


def _reset_periph(st: McuState) -> None:
    for a in (DMA_SRC, DMA_DST, DMA_LEN, DMA_CTL):
        st.set_word(a, 0)
    st.set_word(IRQ_CTL, 1)
    st.set_word(IRQ_VEC, ISR_STUB)


class Mcu:
    """An emulated device: state, monitor bank and the ROM-resident SW-Att.

    Args:
        mmap: memory layout.
        bank: enabled monitors; defaults to none (a baseline MCU).
        key: the 32-byte attestation key burned into ROM.
        trace: keep every step's signals in :attr:`trace`.
    """

    def __init__(self, mmap: MemoryMap = DEFAULT_MAP, bank: MonitorBank | None = None,
                 key: bytes = DEFAULT_KEY, trace: bool = False):
        from .ief import SwAtt

        self.mmap = mmap
        self.bank = bank if bank is not None else MonitorBank(mmap)
        self.key = key
        self.state = load_program(b"", mmap, key)
        self.swatt = SwAtt(self)
        self.trace: list[BusSignals] | None = [] if trace else None
        self.replay_hook: Callable[[int, int], int | None] | None = None

    # -- setup ------------------------------------------------------------

    def load(self, image: bytes) -> None:
        self.state = load_program(image, self.mmap, self.key)
        self._sync_mirrors()

    def feed_input(self, values) -> None:
        self.state.inputs.extend(v & 0xFFFF for v in values)

    def trigger_interrupt(self) -> None:
        self.state.irq_pending = True

    def dma_program(self, src: int, dst: int, length: int) -> None:
        """Configure and start a DMA copy of ``length`` words."""
        if length <= 0:
            raise DmaRangeError("DMA length must be positive")
        for base in (src, dst):
            if base & 1 or not self.mmap.range_mapped(base, 2 * length):
                raise DmaRangeError(f"DMA range 0x{base:04x}+{2 * length} leaves mapped memory")
        self.state.dma = DmaConfig(src, dst, length, True)

    def reset(self) -> None:
        """Hardware reset: clear volatile state, keep pmem, ROM, LMT and cycles."""
        st = self.state
        st.regs = [0] * 8
        st.pc = BOOT_VECTOR
        st.sp = self.mmap.stack_top
        st.zero = st.carry = False
        d = self.mmap.dmem
        st.mem[d.start:d.end] = bytes(d.length)
        st.dma = DmaConfig()
        st.irq_pending = False
        st.halted = False
        st.fault = None
        st.resets += 1
        _reset_periph(st)
        self.bank.on_reset()
        self.swatt.abort()
        self._sync_mirrors()

    # -- bus --------------------------------------------------------------

    def _check_mapped(self, addr: int) -> None:
        if addr & 1:
            raise Fault(f"unaligned word access at 0x{addr:04x}")
        if not self.mmap.is_mapped(addr):
            raise Fault(f"access to unmapped address 0x{addr:04x}")

    def read(self, addr: int, plan: Plan) -> int:
        """Value a read of ``addr`` returns; side effects are deferred to ``plan``."""
        self._check_mapped(addr)
        st = self.state
        if addr == GPIO_IN:
            v = st.inputs[st.input_pos] if st.input_pos < len(st.inputs) else 0

            def consume() -> None:
                st.input_pos += 1
            plan.post.append(consume)
            return v
        if addr == RTC:
            return st.cycles & 0xFFFF
        return st.word(addr)

    def _commit_write(self, addr: int, v: int) -> None:
        st, m = self.state, self.mmap
        if addr in m.rom or m.lmt.start <= addr < EXEC + 2:
            return  # immutable or monitor-owned
        st.set_word(addr, v)
        if addr == GPIO_OUT:
            st.gpio_out.append(v)
        elif addr == DMA_CTL and v & 1:
            try:
                self.dma_program(st.word(DMA_SRC), st.word(DMA_DST), st.word(DMA_LEN))
            except DmaRangeError:
                st.set_word(DMA_CTL, 0x8000)

    def _sync_mirrors(self) -> None:
        st = self.state
        lmt = self.mmap.lmt
        st.mem[lmt.start:lmt.end] = self.bank.lmt
        st.set_word(EXEC, self.bank.exec)

    # -- planning ---------------------------------------------------------

    def _plan_dma(self) -> Plan:
        st, d = self.state, self.state.dma
        plan = Plan(pc=st.pc, cost=isa.DMA_WORD_CYCLES, agent=Agent.DMA)
        v = self.read(d.src, plan)
        self._check_mapped(d.dst)
        plan.accesses = (MemAccess(d.src, Kind.READ, Agent.DMA), MemAccess(d.dst, Kind.WRITE, Agent.DMA))
        plan.writes.append((d.dst, v))

        def advance() -> None:
            d.src += 2
            d.dst += 2
            d.remaining -= 1
            d.active = d.remaining > 0
        plan.post.append(advance)
        return plan

    def _stack_addr(self, addr: int) -> int:
        addr &= 0xFFFF
        if addr & 1 or addr not in self.mmap.dmem:
            raise Fault(f"stack access outside dmem at 0x{addr:04x}")
        return addr

    def _plan_irq(self) -> Plan:
        st = self.state
        slot = self._stack_addr(st.sp - 2)
        plan = Plan(pc=st.word(IRQ_VEC), cost=isa.IRQ_CYCLES, irq=True)
        plan.accesses = (MemAccess(slot, Kind.WRITE),)
        plan.writes.append((slot, st.pc))
        plan.regs[isa.SP] = slot

        def ack() -> None:
            st.irq_pending = False
        plan.post.append(ack)
        return plan

    def _plan_core(self) -> Plan:
        st, m = self.state, self.mmap
        pc = st.pc
        if pc & 1 or not (pc in m.pmem or pc in m.rom):
            raise Fault(f"PC 0x{pc:04x} outside executable memory")
        # fetching from K is a K access: put it on the bus before decoding,
        # so a monitor can veto it whatever the key bytes decode to
        fetch = (MemAccess(pc, Kind.READ),) if pc in m.k_region else ()
        if not fetch:
            return self._plan_ins(pc, fetch)
        # any fault of a K-fetched instruction would also depend on key bits
        try:
            return self._plan_ins(pc, fetch)
        except Fault as e:
            msg = str(e)
            plan = Plan(pc=pc, cost=1, accesses=fetch, halt=True)
            plan.post.append(lambda: setattr(st, "fault", msg))
            return plan

    def _plan_ins(self, pc: int, fetch: tuple) -> Plan:
        st, m = self.state, self.mmap
        try:
            ins = isa.decode(st.mem, pc)
        except isa.DecodeError as e:
            raise Fault(f"decode error at 0x{pc:04x}: {e}") from None
        r = st.regs
        nxt = (pc + ins.size) & 0xFFFF
        plan = Plan(pc=nxt, cost=ins.cycles, accesses=fetch)
        op, a, b, imm = ins.op, ins.a, ins.b, ins.imm

        def load(addr: int) -> int:
            addr &= 0xFFFF
            v = self.read(addr, plan)
            if self.replay_hook is not None:
                fed = self.replay_hook(pc, addr)
                if fed is not None:
                    v = fed
            plan.accesses += (MemAccess(addr, Kind.READ),)
            return v & 0xFFFF

        def store(addr: int, v: int) -> None:
            addr &= 0xFFFF
            self._check_mapped(addr)
            plan.accesses += (MemAccess(addr, Kind.WRITE),)
            plan.writes.append((addr, v & 0xFFFF))

        if op is Op.NOP:
            pass
        elif op is Op.HALT:
            plan.halt = True
            plan.pc = pc
        elif op is Op.MOVI:
            plan.regs[a] = imm
        elif op is Op.MOV:
            plan.regs[a] = r[b]
        elif op is Op.LD:
            plan.regs[a] = load(r[b] + imm)
        elif op is Op.ST:
            store(r[a] + imm, r[b])
        elif op is Op.LDI:
            plan.regs[a] = load(imm)
        elif op is Op.STI:
            store(imm, r[a])
        elif op in (Op.ADD, Op.SUB, Op.AND, Op.XOR, Op.CMP):
            x, y = r[a], r[b]
            if op is Op.ADD:
                res, c = x + y, x + y > 0xFFFF
            elif op in (Op.SUB, Op.CMP):
                res, c = x - y, x < y
            elif op is Op.AND:
                res, c = x & y, False
            else:
                res, c = x ^ y, False
            res &= 0xFFFF
            plan.flags = (res == 0, c)
            if op is not Op.CMP:
                plan.regs[a] = res
        elif op is Op.JMP:
            plan.pc = imm
        elif op is Op.JZ:
            plan.pc = imm if st.zero else nxt
        elif op is Op.JNZ:
            plan.pc = imm if not st.zero else nxt
        elif op is Op.JC:
            plan.pc = imm if st.carry else nxt
        elif op is Op.JMPR:
            plan.pc = r[a]
        elif op is Op.CALL:
            slot = self._stack_addr(st.sp - 2)
            store(slot, nxt)
            plan.regs[isa.SP] = slot
            plan.pc = imm
        elif op is Op.RET:
            slot = self._stack_addr(st.sp)
            plan.pc = load(slot)
            plan.regs[isa.SP] = slot + 2
        elif op is Op.PUSH:
            slot = self._stack_addr(st.sp - 2)
            store(slot, r[a])
            plan.regs[isa.SP] = slot
        elif op is Op.POP:
            slot = self._stack_addr(st.sp)
            v = load(slot)
            plan.regs[isa.SP] = slot + 2
            plan.regs[a] = v
        elif op in (Op.IN, Op.OUT):
            if imm not in m.periph:
                raise Fault(f"{op.name} port 0x{imm:04x} is not a peripheral")
            if op is Op.IN:
                plan.regs[a] = load(imm)
            else:
                store(imm, r[a])
        else:  # pragma: no cover - decode guarantees a known opcode
            raise Fault(f"unhandled opcode {op}")
        return plan

    def plan_step(self) -> Plan:
        st = self.state
        if st.dma.active:
            return self._plan_dma()
        if st.irq_pending and st.word(IRQ_CTL) & 1:
            return self._plan_irq()
        stub = self.swatt.plan()
        if stub is not None:
            return stub
        return self._plan_core()

    # -- execution --------------------------------------------------------

    def execute(self, plan: Plan) -> StepResult:
        """Offer ``plan`` to the monitors, then commit it or reset."""
        st = self.state
        pmem_write = any(a.is_write and a.addr in self.mmap.pmem for a in plan.accesses)
        sig = BusSignals(st.pc, plan.accesses, plan.irq, pmem_write, st.cycles)
        if self.trace is not None:
            self.trace.append(sig)
        st.cycles += plan.cost
        violations = self.bank.step(sig, st.mem)
        if violations:
            self.reset()
            return StepResult(sig, True, violations)
        for addr, v in plan.writes:
            self._commit_write(addr, v)
        for reg, v in plan.regs.items():
            st.regs[reg] = v & 0xFFFF
        if plan.flags is not None:
            st.zero, st.carry = plan.flags
        st.pc = plan.pc
        for fn in plan.post:
            fn()
        if plan.halt:
            st.halted = True
        self._sync_mirrors()
        return StepResult(sig)

    def step(self) -> StepResult:
        st = self.state
        if st.halted:
            raise MachineHalted(st.fault or "machine is halted")
        try:
            plan = self.plan_step()
        except Fault as e:
            st.halted = True
            st.fault = str(e)
            return StepResult(None, fault=str(e))
        return self.execute(plan)

    def external_write(self, addr: int, words, agent: Agent = Agent.DMA) -> list[StepResult]:
        """Bus-master writes, one monitored step per word.

        With the default DMA agent this models an external master (debug
        port, DMA): PMEM rewrites are visible to RATA and APEX. ``Agent.CORE``
        models a store issued by whatever software runs at the current PC.
        """
        out = []
        for i, w in enumerate(words):
            a = (addr + 2 * i) & 0xFFFF
            if a & 1 or not self.mmap.is_mapped(a):
                raise DmaRangeError(f"external write to unmapped 0x{a:04x}")
            plan = Plan(pc=self.state.pc, cost=isa.DMA_WORD_CYCLES, agent=agent,
                        accesses=(MemAccess(a, Kind.WRITE, agent),), writes=[(a, w & 0xFFFF)])
            res = self.execute(plan)
            out.append(res)
            if res.reset:
                break
        return out

    def run(self, max_steps: int = 100_000, until: Callable[["Mcu"], bool] | None = None) -> int:
        """Step until halted, ``until(self)`` holds, or ``max_steps``; returns steps taken."""
        n = 0
        while n < max_steps and not self.state.halted:
            if until is not None and until(self):
                break
            self.step()
            n += 1
        return n

    def vector_to_swatt(self, return_pc: int) -> None:
        """Do what ``CALL SWATT_ENTRY`` would: push ``return_pc``, jump to the entry."""
        st = self.state
        slot = self._stack_addr(st.sp - 2)
        st.set_word(slot, return_pc)
        st.sp = slot
        st.pc = self.mmap.swatt_region.start

    @property
    def att_out(self):
        return self.state.att_out


__all__ = [
    "Mcu", "McuState", "DmaConfig", "StepResult", "Plan", "load_program", "build_rom",
    "ImageTooLarge", "DmaRangeError", "MachineHalted", "Fault", "DEFAULT_KEY", "ATT_OUT",
]
