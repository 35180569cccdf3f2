import pytest

from mcuproof.asm import assemble
from mcuproof.bus import Agent, BusSignals, Kind, MemAccess
from mcuproof.ief import AttScope, ief_run
from mcuproof.mcu import Mcu
from mcuproof.memmap import (CHAL, DEFAULT_MAP, ER_MIN, K_ADDR, LMT, SWATT_ENTRY, SWATT_EXIT,
                             SWATT_SWEEP)
from mcuproof.monitors import (ApexConfig, MonitorBank, Phase, RataState, Violation, VrasedConfig,
                               VrasedState, decode_time, rata_update, vrased_check)

import fuzzers

VCFG = VrasedConfig.from_map(DEFAULT_MAP)


def sig(pc, *acc, irq=False, pmem_write=False, cycle=0):
    return BusSignals(pc, tuple(acc), irq, pmem_write, cycle)


def rd(addr, agent=Agent.CORE):
    return MemAccess(addr, Kind.READ, agent)


def wr(addr, agent=Agent.CORE):
    return MemAccess(addr, Kind.WRITE, agent)


# --- VRASED --------------------------------------------------------------------------

def test_app_read_of_key():
    _, v = vrased_check(sig(0x1000, rd(K_ADDR)), VrasedState(), VCFG)
    assert v == (Violation.KEY_ACCESS,)


def test_dma_read_of_key_even_during_swatt():
    st = VrasedState(True, SWATT_ENTRY)
    _, v = vrased_check(sig(SWATT_SWEEP, rd(K_ADDR + 4, Agent.DMA)), st, VCFG)
    assert Violation.KEY_ACCESS in v


def test_jump_into_middle_of_swatt():
    _, v = vrased_check(sig(SWATT_SWEEP), VrasedState(False, 0x1000), VCFG)
    assert v == (Violation.SWATT_ATOMICITY,)


def test_leaving_swatt_early():
    _, v = vrased_check(sig(0x1000), VrasedState(True, SWATT_SWEEP), VCFG)
    assert v == (Violation.SWATT_ATOMICITY,)


def test_swatt_reads_key_legitimately():
    st, v = vrased_check(sig(SWATT_ENTRY), VrasedState(False, 0x1000), VCFG)
    assert v == ()
    st, v = vrased_check(sig(SWATT_SWEEP, rd(K_ADDR)), st, VCFG)
    assert v == ()
    st, v = vrased_check(sig(SWATT_EXIT), st, VCFG)
    st, v = vrased_check(sig(0x1000), st, VCFG)
    assert v == () and not st.in_swatt


# --- RATA ----------------------------------------------------------------------------

def _b(st, s, chal=bytes(16)):
    return rata_update(s, st, chal, s.cycle, DEFAULT_MAP.lmt, SWATT_ENTRY)


def test_rata_b_logs_challenge_after_pmem_write():
    c1 = bytes(range(16))
    st, _ = _b(RataState("B"), sig(0x1000, wr(0x1800), pmem_write=True))
    assert st.pmem_modified_latch
    st, _ = _b(st, sig(SWATT_ENTRY), c1)
    assert st.lmt == c1 and not st.pmem_modified_latch


def test_rata_b_second_attestation_keeps_lmt():
    c1, c2 = bytes([1]) * 16, bytes([2]) * 16
    st, _ = _b(RataState("B"), sig(0x1000, wr(0x1800), pmem_write=True))
    st, _ = _b(st, sig(SWATT_ENTRY), c1)
    st, _ = _b(st, sig(0x1000))
    st, _ = _b(st, sig(SWATT_ENTRY), c2)
    assert st.lmt == c1


def test_rata_a_logs_time():
    st, _ = rata_update(sig(0x1000, wr(0x1800), pmem_write=True), RataState("A"), bytes(16), 42,
                        DEFAULT_MAP.lmt, SWATT_ENTRY)
    assert decode_time(st.lmt) == 42


@pytest.mark.parametrize("agent", [Agent.CORE, Agent.DMA])
def test_lmt_write_is_a_violation(agent):
    _, v = _b(RataState("B"), sig(0x1000, wr(LMT + 6, agent)))
    assert v == (Violation.LMT_WRITE,)


def test_lmt_survives_software_write_attempt():
    m = Mcu(DEFAULT_MAP, MonitorBank.for_arch({"vrased", "rata_b"}))
    m.load(assemble(".org 0x1000\n MOVI R2, 0x4141\n STI [0x1800], R2\n"
                    f" MOVI R2, 7\n STI [0x{LMT:04x}], R2\nspin:\n JMP spin\n").image(0x1000))
    m.state.mem[CHAL:CHAL + 16] = bytes([9]) * 16
    m.run(2)
    ief_run(m, bytes([9]) * 16, AttScope.lmt_only(DEFAULT_MAP), return_pc=0x100c)
    assert bytes(m.state.mem[LMT:LMT + 16]) == bytes([9]) * 16
    m.state.pc = 0x100c
    m.run(2)
    assert m.state.resets == 1
    assert m.bank.lmt == bytes([9]) * 16


# --- APEX ----------------------------------------------------------------------------

def pox_machine():
    image, sym = fuzzers.pox_firmware()
    m = Mcu(DEFAULT_MAP, MonitorBank.for_arch({"vrased", "apex"}))
    m.load(image)
    cfg = ApexConfig(sym["er_min"], sym["er_max"], 0x3000, 0x3002)
    m.external_write(ER_MIN, [cfg.er_min, cfg.er_max, cfg.or_min, cfg.or_max], Agent.CORE)
    m.state.pc = sym["pre"]
    return m, sym, cfg


def run_to_idle(m, sym):
    m.run(200, until=lambda x: x.state.pc == sym["idle"])
    m.step()  # the exit is seen on the first step outside ER


def attest_exec(m, sym, cfg):
    report, _ = ief_run(m, bytes(16), AttScope.pox(cfg, DEFAULT_MAP), return_pc=sym["idle"])
    return report.exec


def test_clean_er_run_sets_exec():
    m, sym, cfg = pox_machine()
    run_to_idle(m, sym)
    assert m.bank.apex_state.phase is Phase.EXECUTED
    assert attest_exec(m, sym, cfg) == 1


def test_interrupt_mid_er_clears_exec():
    m, sym, cfg = pox_machine()
    m.run(5)
    assert cfg.in_er(m.state.pc)
    m.trigger_interrupt()
    m.run(200, until=lambda x: x.state.pc == sym["idle"])
    assert attest_exec(m, sym, cfg) == 0


def test_or_write_after_execution_clears_exec():
    m, sym, cfg = pox_machine()
    run_to_idle(m, sym)
    assert m.bank.exec == 1
    m.state.pc = sym["poke_or"]
    m.run(3)
    assert m.bank.exec == 0
    assert attest_exec(m, sym, cfg) == 0


def test_metadata_write_clears_exec():
    m, sym, cfg = pox_machine()
    run_to_idle(m, sym)
    assert m.bank.exec == 1
    m.external_write(ER_MIN + 6, [cfg.or_max], Agent.CORE)
    assert m.bank.exec == 0


def test_invalid_config_never_sets_exec():
    m, sym, cfg = pox_machine()
    m.external_write(ER_MIN, [cfg.er_max, cfg.er_min], Agent.CORE)
    m.run(200, until=lambda x: x.state.pc == sym["idle"])
    assert m.bank.exec == 0


def test_exec_word_is_not_software_writable():
    m, sym, cfg = pox_machine()
    m.external_write(ER_MIN - 2, [1], Agent.CORE)
    assert m.bank.exec == 0
    assert m.state.word(ER_MIN - 2) == 0


# --- bank ----------------------------------------------------------------------------

def test_benign_trace_under_vrased():
    m = Mcu(DEFAULT_MAP, MonitorBank.for_arch({"vrased"}), trace=True)
    m.load(assemble(".org 0x1000\nloop:\n MOVI R2, 1\n ADD R3, R2\n STI [0x3000], R3\n"
                    " JMP loop\n").image(0x1000))
    m.run(300)
    assert m.state.resets == 0 and not m.bank.evidence


def test_key_access_and_irq_in_one_step():
    bank = MonitorBank.for_arch({"vrased"})
    bank.vrased_state = VrasedState(True, SWATT_ENTRY)
    v = bank.step(sig(SWATT_SWEEP, rd(K_ADDR, Agent.DMA), irq=True, cycle=77), bytearray(0x10000))
    assert Violation.KEY_ACCESS in v and Violation.SWATT_INTERRUPT in v
    assert len(bank.evidence) == 1
    assert bank.evidence[0].cycle == 77


def test_vetoed_step_keeps_monitor_state():
    bank = MonitorBank.for_arch({"vrased", "rata_b"})
    before = bank.rata_state
    bank.step(sig(0x1000, wr(0x1800), rd(K_ADDR), pmem_write=True), bytearray(0x10000))
    assert bank.rata_state == before
