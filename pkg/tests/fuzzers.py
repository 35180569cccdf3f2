"""Random trace and program generators shared by the property-style tests."""

from __future__ import annotations

import functools
import random
from dataclasses import dataclass

from mcuproof.asm import assemble
from mcuproof.bus import Agent
from mcuproof.ief import AbortedByReset, AttScope, ief_run
from mcuproof.mcu import Mcu
from mcuproof.memmap import DEFAULT_MAP, EXEC, ER_MIN, K_ADDR, K_LEN, OR_MAX, SWATT_ENTRY, SWATT_SWEEP
from mcuproof.monitors import ApexConfig, MonitorBank

from oracles import exec_oracle

# --- EXEC soundness traces ---------------------------------------------------------

POX_FW = """
.org 0x1000
pre:
    MOVI R1, 0x4000
    CALL er_min
idle:
    NOP
    JMP idle
pre_mid:
    MOVI R1, 0x4000
    CALL er_loop
    JMP idle
poke_or:
    MOVI R2, 0x1234
    STI [0x3000], R2
    JMP idle
poke_er:
    MOVI R2, 0
    STI [er_body], R2
    JMP idle
poke_dmem:
    MOVI R2, 7
    STI [0x3100], R2
    JMP idle
.org 0x1100
er_min:
    MOVI R2, 3
er_loop:
    STI [0x3000], R2
    MOVI R3, 1
    SUB R2, R3
    JNZ er_loop
er_body:
    NOP
er_max:
    RET
"""
OR_LO, OR_HI = 0x3000, 0x3002


@functools.lru_cache(maxsize=None)
def pox_firmware():
    asm = assemble(POX_FW)
    return asm.image(0x1000), asm.symbols


@dataclass
class ExecCase:
    monitor_exec: int
    oracle_exec: bool
    steps: int


def exec_trace(rng: random.Random) -> ExecCase | None:
    """One random trace around ER execution; None if it faulted or reset."""
    image, sym = pox_firmware()
    mcu = Mcu(DEFAULT_MAP, MonitorBank.for_arch({"vrased", "apex"}), trace=True)
    mcu.load(image)
    cfg = ApexConfig(sym["er_min"], sym["er_max"], OR_LO, OR_HI)
    if rng.random() < 0.05:
        cfg = ApexConfig(sym["er_max"], sym["er_min"], OR_LO, OR_HI)
    mcu.external_write(ER_MIN, [cfg.er_min, cfg.er_max, cfg.or_min, cfg.or_max], Agent.CORE)
    mcu.trace = []
    mcu.state.pc = sym[rng.choice(["pre", "pre", "pre", "pre_mid", "idle"])]
    targets = [OR_LO, OR_LO, 0x3100, sym["er_body"], ER_MIN + 2 * rng.randrange(4), EXEC, 0x3200]
    p = rng.choice([0.0, 0.01, 0.03, 0.08])
    n = rng.randrange(10, 45)
    for _ in range(n):
        if rng.random() < p:
            r = rng.random()
            if r < 0.25:
                mcu.trigger_interrupt()
            elif r < 0.45 and not mcu.state.dma.active:
                src = rng.choice([0x3100, OR_LO, sym["er_min"]])
                dst = rng.choice([0x3200, OR_LO, 0x3100])
                mcu.dma_program(src, dst, rng.randrange(1, 3))
            elif r < 0.8:
                agent = rng.choice([Agent.CORE, Agent.CORE, Agent.DMA])
                res = mcu.external_write(rng.choice(targets), [rng.randrange(0x10000)], agent)
                if any(x.reset for x in res):
                    return None
            else:
                mcu.state.pc = sym[rng.choice(["idle", "poke_or", "poke_er", "poke_dmem",
                                                "pre", "er_loop", "er_body"])]
        res = mcu.step()
        if res.reset or res.fault or mcu.state.halted:
            return None
    # let DMA and a pending irq drain before SW-Att runs
    for _ in range(8):
        if not (mcu.state.dma.active or mcu.state.irq_pending):
            break
        res = mcu.step()
        if res.reset or res.fault or mcu.state.halted:
            return None
    if mcu.state.dma.active or mcu.state.irq_pending:
        return None
    trace = list(mcu.trace)
    mcu.trace = None
    # judge against the metadata actually in force: injected writes may have changed it
    mem = mcu.state.mem
    cfg = ApexConfig(*(mem[a] | mem[a + 1] << 8 for a in range(ER_MIN, ER_MIN + 8, 2)))
    verdict = exec_oracle(trace, cfg.er_min, cfg.er_max, cfg.or_min, cfg.or_max,
                          EXEC, OR_MAX + 2, cfg.valid(DEFAULT_MAP))
    try:
        report, _ = ief_run(mcu, bytes(16), AttScope.lmt_only(DEFAULT_MAP), return_pc=sym["idle"])
    except (AbortedByReset, RuntimeError):
        return None
    return ExecCase(report.exec, verdict, len(trace))


# --- key secrecy probes -------------------------------------------------------------

def _attack(rng: random.Random) -> list[str]:
    j = 2 * rng.randrange(K_LEN // 2)
    k = K_ADDR + j
    kind = rng.randrange(9)
    r = rng.randrange(2, 6)
    if kind == 0:
        return [f"LDI R{r}, [0x{k:04x}]"]
    if kind == 1:
        return [f"MOVI R5, 0x{k:04x}", f"LD R{r}, [R5+0]"]
    if kind == 2:
        off = rng.randrange(1, 64) * 2
        return [f"MOVI R5, 0x{k - off:04x}", f"LD R{r}, [R5+{off}]"]
    if kind == 3:
        n = rng.randrange(1, 8)
        return [f"MOVI R2, 0x{k:04x}", "STI [DMA_SRC], R2", "MOVI R2, 0x3100",
                "STI [DMA_DST], R2", f"MOVI R2, {n}", "STI [DMA_LEN], R2",
                "MOVI R2, 1", "STI [DMA_CTL], R2", "NOP", "NOP"]
    if kind == 4:
        return [f"JMP 0x{SWATT_SWEEP:04x}"]
    if kind == 5:
        return ["MOVI R1, 0x4000", f"CALL 0x{SWATT_ENTRY:04x}"]
    if kind == 6:
        return [f"MOVI R2, 0x{rng.randrange(0x10000):04x}", f"STI [0x{k:04x}], R2"]
    if kind == 7:
        return [f"MOVI R5, 0x{k:04x}", f"ST [R5+0], R{r}", f"LD R{r}, [R5+0]"]
    return [f"MOVI R4, 0x{k:04x}", "JMPR R4"]


def _benign(rng: random.Random) -> str:
    r, s = rng.randrange(2, 6), rng.randrange(2, 6)
    return rng.choice([
        f"MOVI R{r}, 0x{rng.randrange(0x10000):04x}", f"MOV R{r}, R{s}", f"ADD R{r}, R{s}",
        f"XOR R{r}, R{s}", f"STI [0x{0x3000 + 2 * rng.randrange(64):04x}], R{r}", "NOP",
        f"PUSH R{r}", f"POP R{r}",
    ])


def key_probe_source(rng: random.Random) -> tuple[str, int]:
    lines = [".org 0x1000", "    MOVI R1, 0x3f00"]
    kinds = 0
    for _ in range(rng.randrange(1, 4)):
        lines += [f"    {_benign(rng)}" for _ in range(rng.randrange(0, 4))]
        lines += [f"    {x}" for x in _attack(rng)]
        kinds += 1
    lines += ["spin:", "    JMP spin"]
    return "\n".join(lines) + "\n", kinds


def _observable(mcu: Mcu) -> tuple:
    st = mcu.state
    m = mcu.mmap
    return (tuple(st.regs), st.zero, st.carry, bytes(st.mem[m.dmem.start:m.dmem.end]),
            bytes(st.mem[m.periph.start:m.periph.end]), st.halted, st.resets)


@dataclass
class KeyCase:
    leaked: bool
    unguarded_reads: int
    protected_reads: int


def key_probe(rng: random.Random, steps: int = 40) -> KeyCase:
    """Run one fuzzed program under two complementary keys in lockstep.

    ``leaked`` is True if any register, DMEM or peripheral byte ever differs
    between the two runs (noninterference). ``unguarded_reads`` counts K
    accesses from outside SW-Att that were *not* vetoed by a reset.
    """
    src, _ = key_probe_source(rng)
    image = assemble(src).image(0x1000)
    ka = bytes(rng.randrange(256) for _ in range(K_LEN))
    kb = bytes(b ^ 0xFF for b in ka)
    full = AttScope.full_pmem(DEFAULT_MAP)
    scope = full if rng.random() < 0.5 else AttScope(full.mode, ((K_ADDR, K_LEN),))
    ms = []
    for key in (ka, kb):
        m = Mcu(DEFAULT_MAP, MonitorBank.for_arch({"vrased"}), key)
        m.load(image)
        m.swatt.request(scope)
        ms.append(m)
    a, b = ms
    unguarded = protected = 0
    sw = DEFAULT_MAP.swatt_region
    kr = DEFAULT_MAP.k_region
    for _ in range(steps):
        if a.state.halted or b.state.halted:
            if a.state.halted != b.state.halted:
                return KeyCase(True, unguarded, protected)
            break
        ra, rb = a.step(), b.step()
        for res in (ra, rb):
            sig = res.signals
            if sig is None:
                continue
            for acc in sig.accesses:
                if acc.addr in kr and (acc.agent is Agent.DMA or sig.pc not in sw):
                    protected += 1
                    if not res.reset:
                        unguarded += 1
        if _observable(a) != _observable(b) or a.state.pc != b.state.pc:
            return KeyCase(True, unguarded, protected)
    return KeyCase(False, unguarded, protected)
