import random

import pytest
from hypothesis import given, settings, strategies as st

from mcuproof import isa
from mcuproof.asm import assemble
from mcuproof.bus import Agent
from mcuproof.mcu import DmaRangeError, ImageTooLarge, MachineHalted, Mcu, load_program
from mcuproof.memmap import (BOOT_VECTOR, DEFAULT_MAP, K_ADDR, K_LEN, SWATT_ENTRY, MapError,
                             MemoryMap, Region, load_image, save_image)
from mcuproof.monitors import MonitorBank, Violation

PMEM = DEFAULT_MAP.pmem


def machine(src: str, features=(), trace=False) -> Mcu:
    m = Mcu(DEFAULT_MAP, MonitorBank.for_arch(features), trace=trace)
    m.load(assemble(src).image(PMEM.start))
    return m


# --- load_program ------------------------------------------------------------------

def test_empty_image():
    s = load_program(b"")
    assert s.pc == PMEM.start
    assert s.sp == DEFAULT_MAP.dmem.end
    assert s.cycles == 0
    assert not any(s.mem[PMEM.start:PMEM.end])
    assert not any(s.mem[DEFAULT_MAP.dmem.start:DEFAULT_MAP.dmem.end])


def test_smallest_program():
    image = isa.encode(isa.Instruction(isa.Op.MOVI, 2, imm=7))
    # MOVI is a two-word instruction here; HALT follows it
    image += isa.encode(isa.Instruction(isa.Op.HALT))
    m = Mcu()
    m.load(image)
    m.step()
    m.step()
    assert m.state.regs[2] == 7
    assert m.state.halted
    with pytest.raises(MachineHalted):
        m.step()


def test_image_too_large():
    load_program(bytes(PMEM.length))
    with pytest.raises(ImageTooLarge):
        load_program(bytes(PMEM.length + 1))


def test_map_rejects_overlap():
    with pytest.raises(MapError):
        MemoryMap(dmem=Region(0x2000, 0x2000))
    with pytest.raises(MapError):
        MemoryMap(k_region=Region(0x0100, 32))


def test_image_and_sidecar_round_trip(tmp_path):
    mmap = DEFAULT_MAP.with_pmem_size(0x1000)
    save_image(tmp_path / "fw.bin", b"\x01\x00" * 4, mmap)
    image, back = load_image(tmp_path / "fw.bin")
    assert image == b"\x01\x00" * 4
    assert back.pmem == mmap.pmem and back.k_region == mmap.k_region


# --- step ----------------------------------------------------------------------------

def test_store_into_key_is_discarded_and_resets():
    m = machine(f".org 0x1000\n MOVI R2, 0x1234\n STI [0x{K_ADDR:04x}], R2\n", {"vrased"})
    key = bytes(m.state.mem[K_ADDR:K_ADDR + K_LEN])
    m.step()
    res = m.step()
    assert res.reset and Violation.KEY_ACCESS in res.violations
    assert bytes(m.state.mem[K_ADDR:K_ADDR + K_LEN]) == key
    assert m.state.pc == BOOT_VECTOR


def test_nop_costs_one_cycle():
    m = machine(".org 0x1000\n NOP\n", {"vrased"})
    res = m.step()
    assert not res.reset and m.state.cycles == 1


def test_dma_write_into_pmem_is_flagged():
    m = Mcu()
    m.dma_program(0x3000, 0x1800, 1)
    res = m.step()
    assert res.signals.pmem_write
    assert res.signals.mem_access.agent is Agent.DMA


def test_decode_error_halts_without_reset():
    m = Mcu()
    m.load(b"\xff\xff")
    res = m.step()
    assert res.fault and m.state.halted and m.state.resets == 0


# --- reset -----------------------------------------------------------------------

def test_reset_of_fresh_state_moves_pc_only():
    m = Mcu()
    before = m.state.copy()
    m.reset()
    assert m.state.pc == BOOT_VECTOR
    assert m.state.regs[1:] == before.regs[1:]
    assert m.state.mem == before.mem
    assert m.state.cycles == before.cycles


def test_reset_zeroes_registers():
    m = machine(".org 0x1000\n MOVI R3, 0xbeef\n")
    m.step()
    assert m.state.regs[3] == 0xBEEF
    m.reset()
    assert m.state.regs[3] == 0


def test_reset_stops_dma():
    m = Mcu()
    m.dma_program(0x3000, 0x3100, 4)
    m.step()
    m.reset()
    assert not m.state.dma.active


# --- interrupts and DMA ------------------------------------------------------------

def test_interrupt_inside_swatt_resets():
    m = machine(f".org 0x1000\n CALL 0x{SWATT_ENTRY:04x}\n", {"vrased"})
    m.step()
    assert m.state.pc == SWATT_ENTRY
    m.step()
    m.trigger_interrupt()
    res = m.step()
    assert res.reset and Violation.SWATT_INTERRUPT in res.violations


def test_dma_copies_four_words_in_four_steps():
    m = Mcu()
    m.state.mem[0x3000:0x3008] = bytes(range(1, 9))
    m.dma_program(0x3000, 0x3100, 4)
    for _ in range(4):
        assert m.state.dma.active
        m.step()
    assert not m.state.dma.active
    assert bytes(m.state.mem[0x3100:0x3108]) == bytes(range(1, 9))


@pytest.mark.parametrize("dst", [K_ADDR - 6, K_ADDR - 2, K_ADDR, K_ADDR + 10])
def test_dma_into_key_first_violating_step(dst):
    m = Mcu(DEFAULT_MAP, MonitorBank.for_arch({"vrased"}), trace=True)
    m.dma_program(0x3000, dst, 4)
    # the first transfer whose destination word lies in K
    expect = next(i for i in range(4) if K_ADDR <= dst + 2 * i < K_ADDR + K_LEN)
    for i in range(4):
        res = m.step()
        if res.reset:
            break
    assert i == expect
    assert Violation.KEY_ACCESS in res.violations


def test_dma_range_error():
    m = Mcu()
    with pytest.raises(DmaRangeError):
        m.dma_program(0x3ffe, 0x3000, 2)
    with pytest.raises(DmaRangeError):
        m.dma_program(0x3000, 0x5000, 1)


# --- properties --------------------------------------------------------------------

_SAFE = ["NOP", "MOVI R{r}, 0x{v:04x}", "MOV R{r}, R{s}", "ADD R{r}, R{s}", "SUB R{r}, R{s}",
         "XOR R{r}, R{s}", "STI [0x{d:04x}], R{r}", "LDI R{r}, [0x{d:04x}]", "PUSH R{r}", "POP R{r}",
         "STI [0x{k:04x}], R{r}", "LDI R{r}, [0x{k:04x}]", "STI [0x{p:04x}], R{r}", "IN R{r}, GPIO_IN"]


def random_program(rng: random.Random, n: int) -> str:
    lines = [".org 0x1000", "    MOVI R1, 0x3f00"]
    for _ in range(n):
        t = rng.choice(_SAFE)
        lines.append("    " + t.format(r=rng.randrange(2, 6), s=rng.randrange(2, 6),
                                       v=rng.randrange(0x10000),
                                       d=0x3000 + 2 * rng.randrange(64),
                                       k=K_ADDR + 2 * rng.randrange(K_LEN // 2),
                                       p=PMEM.start + 0x400 + 2 * rng.randrange(16)))
    lines += ["spin:", "    JMP spin"]
    return "\n".join(lines) + "\n"


def run_script(seed: int, features, trace=False):
    rng = random.Random(seed)
    m = machine(random_program(rng, 25), features, trace)
    m.feed_input([rng.randrange(0x10000) for _ in range(8)])
    results = []
    for _ in range(60):
        if m.state.halted:
            break
        r = rng.random()
        if r < 0.05:
            m.trigger_interrupt()
        elif r < 0.1 and not m.state.dma.active:
            m.dma_program(0x3000 + 2 * rng.randrange(32), 0x3100 + 2 * rng.randrange(32),
                          rng.randrange(1, 4))
        before = bytes(m.state.mem)
        res = m.step()
        results.append((res, before, bytes(m.state.mem)))
    return m, results


_FEATS = st.sampled_from([(), ("vrased",), ("vrased", "apex"), ("vrased", "rata_b")])


@settings(max_examples=150)
@given(st.integers(0, 2**32), _FEATS)
def test_deterministic(seed, feats):
    a, ra = run_script(seed, feats, trace=True)
    b, rb = run_script(seed, feats, trace=True)
    assert a.state.mem == b.state.mem and a.state.regs == b.state.regs
    assert a.trace == b.trace


@settings(max_examples=150)
@given(st.integers(0, 2**32), _FEATS)
def test_vetoed_steps_leave_targets_unchanged(seed, feats):
    _, results = run_script(seed, feats)
    for res, before, after in results:
        if not res.reset:
            continue
        for acc in res.signals.writes():
            a = acc.addr
            if a in DEFAULT_MAP.dmem or a in DEFAULT_MAP.periph:
                continue  # reset reinitialises these as a whole
            assert after[a:a + 2] == before[a:a + 2]


@settings(max_examples=150)
@given(st.integers(0, 2**32), _FEATS)
def test_rom_is_immutable(seed, feats):
    m, _ = run_script(seed, feats)
    fresh = load_program(b"")
    rom = DEFAULT_MAP.rom
    assert m.state.mem[rom.start:rom.end] == fresh.mem[rom.start:rom.end]


@settings(max_examples=150)
@given(st.integers(0, 2**32), _FEATS)
def test_cycles_are_sum_of_fixed_costs(seed, feats):
    m, results = run_script(seed, feats, trace=True)
    total = 0
    for s, (_, before, _) in zip(m.trace, results):
        if s.irq:
            total += isa.IRQ_CYCLES
        elif s.dma:
            total += isa.DMA_WORD_CYCLES
        else:
            total += isa.CYCLES[isa.decode(before, s.pc).op]
    assert m.state.cycles == total
    assert all(x.cycle <= y.cycle for x, y in zip(m.trace, m.trace[1:]))
