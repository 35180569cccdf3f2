"""Independent oracles used by the tests.

Nothing here imports the code under test except plain data types: the
SHA-256 below is written from FIPS 180-4, and the EXEC judge reads a bus
trace directly instead of replaying the monitor's state machine.
"""

from __future__ import annotations

import struct

# --- SHA-256 / HMAC -------------------------------------------------------------

_K = [
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
    0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
    0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
    0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
    0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2,
]
_H0 = [0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19]
_M = 0xFFFFFFFF


def _rotr(x: int, n: int) -> int:
    return ((x >> n) | (x << (32 - n))) & _M


def sha256(data: bytes) -> bytes:
    msg = bytes(data) + b"\x80"
    msg += b"\x00" * ((56 - len(msg) % 64) % 64)
    msg += struct.pack(">Q", 8 * len(data))
    h = list(_H0)
    for off in range(0, len(msg), 64):
        w = list(struct.unpack(">16I", msg[off:off + 64]))
        for t in range(16, 64):
            s0 = _rotr(w[t - 15], 7) ^ _rotr(w[t - 15], 18) ^ (w[t - 15] >> 3)
            s1 = _rotr(w[t - 2], 17) ^ _rotr(w[t - 2], 19) ^ (w[t - 2] >> 10)
            w.append((w[t - 16] + s0 + w[t - 7] + s1) & _M)
        a, b, c, d, e, f, g, hh = h
        for t in range(64):
            t1 = (hh + (_rotr(e, 6) ^ _rotr(e, 11) ^ _rotr(e, 25)) + ((e & f) ^ (~e & g))
                  + _K[t] + w[t]) & _M
            t2 = ((_rotr(a, 2) ^ _rotr(a, 13) ^ _rotr(a, 22)) + ((a & b) ^ (a & c) ^ (b & c))) & _M
            hh, g, f, e, d, c, b, a = g, f, e, (d + t1) & _M, c, b, a, (t1 + t2) & _M
        h = [(x + y) & _M for x, y in zip(h, (a, b, c, d, e, f, g, hh))]
    return struct.pack(">8I", *h)


def hmac_sha256(key: bytes, msg: bytes) -> bytes:
    if len(key) > 64:
        key = sha256(key)
    key = key.ljust(64, b"\x00")
    ipad = bytes(k ^ 0x36 for k in key)
    opad = bytes(k ^ 0x5C for k in key)
    return sha256(opad + sha256(ipad + msg))


# --- canonical string, rebuilt from the documented field layout ------------------

def canonical(chal: bytes, mode_code: int, includes_exec: int, regions: list[tuple[int, bytes]],
              exec_: int, lmt: bytes) -> bytes:
    out = chal + struct.pack("<BBH", mode_code, includes_exec, len(regions))
    for start, data in regions:
        out += struct.pack("<HI", start, len(data))
    out += bytes([exec_]) + lmt
    for _, data in regions:
        out += struct.pack("<I", len(data)) + data
    return out


# --- EXEC judge ----------------------------------------------------------------------

def exec_oracle(trace, er_min: int, er_max: int, or_min: int, or_max: int,
                meta_lo: int, meta_hi: int, valid: bool) -> bool:
    """Judge the proof-of-execution conditions directly on a bus trace.

    The latest stretch of ER activity must (1) have begun at er_min, run
    without interrupts or DMA and left from er_max; after it began, (2) no
    write may touch ER, the metadata registers, and no write may touch OR
    once it ended; (3) DMEM writes while it ran come only from ER code.
    """
    if not valid:
        return False
    in_er = [er_min <= s.pc <= er_max for s in trace]
    last = max((i for i, v in enumerate(in_er) if v), default=None)
    if last is None:
        return False
    # past the end of the trace the PC is at SW-Att entry, i.e. outside ER
    e = last
    sig_e = trace[e]
    if sig_e.pc != er_max or sig_e.irq or sig_e.dma:
        return False
    s = e
    while s > 0 and in_er[s - 1]:
        s -= 1
    if trace[s].pc != er_min:
        return False
    run = trace[s:e + 1]
    if any(x.irq or x.dma for x in run):
        return False
    for i in range(s, len(trace)):
        for acc in trace[i].accesses:
            if acc.kind.value != "write":
                continue
            if er_min <= acc.addr <= er_max + 1:
                return False
            if meta_lo <= acc.addr < meta_hi:
                return False
            if i > e and or_min <= acc.addr <= or_max + 1:
                return False
    return True


# --- CF-Log legality -------------------------------------------------------------------

def cf_log_legal(code: dict, entry: int, log: list, return_pc: int) -> bool:
    """Is ``log`` the taken-transfer sequence of some path from ``entry``?

    ``code`` maps an address to ``(mnemonic, size, target, targets)``: the
    static target of a direct transfer and the declared set of an indirect
    one. Conditional branches log only when taken; the final RET with an
    empty call stack must land on ``return_pc`` as the last entry.
    """
    todo = [(entry, (), 0)]
    seen = set()
    while todo:
        state = todo.pop()
        if state in seen:
            continue
        seen.add(state)
        pc, stack, pos = state
        if pc not in code:
            continue
        mn, size, target, targets = code[pc]
        nxt = log[pos] if pos < len(log) else None
        if mn in ("JZ", "JNZ", "JC"):
            todo.append((pc + size, stack, pos))
            if nxt == target:
                todo.append((target, stack, pos + 1))
        elif mn == "JMP":
            if nxt == target:
                todo.append((target, stack, pos + 1))
        elif mn == "CALL":
            if nxt == target:
                todo.append((target, stack + (pc + size,), pos + 1))
        elif mn == "JMPR":
            if nxt is not None and nxt in targets:
                todo.append((nxt, stack, pos + 1))
        elif mn == "RET":
            if stack:
                if nxt == stack[-1]:
                    todo.append((nxt, stack[:-1], pos + 1))
            elif nxt == return_pc and pos + 1 == len(log):
                return True
        elif mn != "HALT":
            todo.append((pc + size, stack, pos))
    return False
