"""Challenge-response protocol: wire format, verifier, prover and transports.

Frames are ``[u8 type][u32 len][payload]``, little-endian.

``AttRequest`` payload (41 bytes)::

    chal[16] | mode u8 | er_min u16 | er_max u16 | or_min u16 | or_max u16

``AttResponse`` payload::

    status u8 | chal[16] | mac[32] | exec u8 | lmt[16]
    | scope_len u16 | scope | or_len u32 | or_bytes | out_len u32 | output

``output`` is the prover's *claimed* application output; it is not covered
by the MAC. Under PoX the authenticated output is inside ``or_bytes``.
"""

from __future__ import annotations

import collections
import enum
import hashlib
import hmac as _hmac
import json
import random
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .bus import Agent
from .firmware import Firmware, boot, write_metadata
from .ief import (AttReport, AttScope, Challenge, EncodingError, Mode, canonical_encode,
                  compute_mac, write_challenge)
from .instrument import build_cfg
from .isa import COND_JUMPS, Op
from .mcu import Mcu
from .memmap import CHAL_LEN, LMT_LEN
from .monitors import ApexConfig, decode_time

MSG_REQUEST = 1
MSG_RESPONSE = 2
HEADER = struct.Struct("<BI")
MAX_PAYLOAD = 1 << 20
U64_MAX = 2**64 - 1


class FrameError(ValueError):
    pass


class CounterExhausted(RuntimeError):
    pass


class ReplayError(RuntimeError):
    pass


# --- framing ---------------------------------------------------------------------

def encode_frame(kind: int, payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise FrameError("payload too large")
    return HEADER.pack(kind, len(payload)) + payload


def decode_frame(buf: bytes) -> tuple[int, bytes, int]:
    """Parse one frame from the front of ``buf``; returns (type, payload, consumed)."""
    if len(buf) < HEADER.size:
        raise FrameError("truncated header")
    kind, n = HEADER.unpack_from(buf)
    if n > MAX_PAYLOAD:
        raise FrameError("payload too large")
    if len(buf) < HEADER.size + n:
        raise FrameError("truncated payload")
    return kind, bytes(buf[HEADER.size:HEADER.size + n]), HEADER.size + n


@dataclass(frozen=True)
class AttRequest:
    chal: bytes
    mode: Mode
    er_min: int = 0
    er_max: int = 0
    or_min: int = 0
    or_max: int = 0

    _S = struct.Struct("<16sBHHHH")

    @property
    def apex(self) -> ApexConfig:
        return ApexConfig(self.er_min, self.er_max, self.or_min, self.or_max)

    def payload(self) -> bytes:
        from .ief import MODE_CODES
        return self._S.pack(self.chal, MODE_CODES[self.mode], self.er_min, self.er_max,
                            self.or_min, self.or_max)

    @classmethod
    def from_payload(cls, p: bytes) -> "AttRequest":
        from .ief import CODE_MODES
        if len(p) != cls._S.size:
            raise FrameError(f"request payload must be {cls._S.size} bytes")
        chal, mode, *bounds = cls._S.unpack(p)
        if mode not in CODE_MODES:
            raise FrameError(f"unknown mode {mode}")
        return cls(chal, CODE_MODES[mode], *bounds)


class Status(enum.IntEnum):
    OK = 0
    ABORTED = 1


@dataclass(frozen=True)
class AttResponse:
    status: Status
    chal: bytes
    mac: bytes = bytes(32)
    exec: int = 0
    lmt: bytes = bytes(LMT_LEN)
    scope: bytes = b""
    or_bytes: bytes = b""
    output: bytes = b""

    def payload(self) -> bytes:
        return (struct.pack("<B16s32sB16sH", self.status, self.chal, self.mac, self.exec,
                            self.lmt, len(self.scope)) + self.scope
                + struct.pack("<I", len(self.or_bytes)) + self.or_bytes
                + struct.pack("<I", len(self.output)) + self.output)

    @classmethod
    def from_payload(cls, p: bytes) -> "AttResponse":
        try:
            st, chal, mac, ex, lmt, n = struct.unpack_from("<B16s32sB16sH", p)
            off = struct.calcsize("<B16s32sB16sH")
            scope = p[off:off + n]
            off += n
            (m,) = struct.unpack_from("<I", p, off)
            or_bytes = p[off + 4:off + 4 + m]
            off += 4 + m
            (k,) = struct.unpack_from("<I", p, off)
            output = p[off + 4:off + 4 + k]
            off += 4 + k
        except struct.error:
            raise FrameError("truncated response") from None
        if len(scope) != n or len(or_bytes) != m or len(output) != k or off != len(p):
            raise FrameError("response length fields do not match payload")
        if st not in (0, 1) or ex > 1:
            raise FrameError("bad status or exec field")
        return cls(Status(st), chal, mac, ex, lmt, bytes(scope), bytes(or_bytes), bytes(output))

    @classmethod
    def from_report(cls, r: AttReport, output: bytes = b"") -> "AttResponse":
        return cls(Status.OK, r.chal, r.mac, r.exec, r.lmt, r.scope.encode(), r.or_bytes, output)

    def parsed_scope(self) -> AttScope:
        scope, end = AttScope.decode(self.scope)
        if end != len(self.scope):
            raise EncodingError("trailing scope bytes")
        return scope


def encode_message(msg: AttRequest | AttResponse) -> bytes:
    kind = MSG_REQUEST if isinstance(msg, AttRequest) else MSG_RESPONSE
    return encode_frame(kind, msg.payload())


def decode_message(buf: bytes) -> AttRequest | AttResponse:
    kind, payload, used = decode_frame(buf)
    if used != len(buf):
        raise FrameError("trailing bytes after frame")
    if kind == MSG_REQUEST:
        return AttRequest.from_payload(payload)
    if kind == MSG_RESPONSE:
        return AttResponse.from_payload(payload)
    raise FrameError(f"unknown message type {kind}")


# --- verdicts ----------------------------------------------------------------------

class Reason(str, enum.Enum):
    OK = "Ok"
    MAC_MISMATCH = "MacMismatch"
    STALE_CHALLENGE = "StaleChallenge"
    EXEC_ZERO = "ExecZero"
    LMT_MISMATCH = "LmtMismatch"
    PATH_INVALID = "PathInvalid"
    DATA_REPLAY_MISMATCH = "DataReplayMismatch"
    PARSE_ERROR = "ParseError"
    PROVER_SILENT = "ProverSilent"


@dataclass(frozen=True)
class Verdict:
    reason: Reason
    detail: str = ""
    output: bytes | None = None

    @property
    def accepted(self) -> bool:
        return self.reason is Reason.OK

    def to_dict(self) -> dict:
        return {"accepted": self.accepted, "reason": self.reason.value, "detail": self.detail,
                "output": None if self.output is None else self.output.hex()}


def _ok(output: bytes | None = None) -> Verdict:
    return Verdict(Reason.OK, output=output)


# --- verifier ----------------------------------------------------------------------

@dataclass
class VerifierState:
    """Verifier-side knowledge of one prover.

    ``last_update_chal`` is the challenge under which RATA_B should have
    logged the latest authorized PMEM update (zeros: the factory image).
    ``authorized_time`` plays the same role for RATA_A.
    """

    key: bytes
    fw: Firmware
    expected_pmem: bytes = b""
    seed: int = 0
    counter: int = 0
    rata_variant: str = "B"
    last_update_chal: bytes = bytes(CHAL_LEN)
    authorized_time: int = 0
    update_pending: bool = False
    pending: dict[bytes, AttRequest] = field(default_factory=dict)
    rng: random.Random = field(init=False)

    def __post_init__(self) -> None:
        self.rng = random.Random(self.seed)
        if not self.expected_pmem:
            self.expected_pmem = self.fw.image

    def authorize_update(self, image: bytes, time: int | None = None) -> None:
        """Record an authorized code update; the next RATA report must reflect it."""
        self.expected_pmem = bytes(image)
        self.update_pending = True
        if time is not None:
            self.authorized_time = time


def verifier_issue(vs: VerifierState, mode: Mode) -> AttRequest:
    if vs.counter >= U64_MAX:
        raise CounterExhausted("challenge counter exhausted")
    vs.counter += 1
    chal = bytes(Challenge(vs.counter, vs.rng.randbytes(8)))
    cfg = vs.fw.er_cfg if mode is Mode.POX else ApexConfig()
    req = AttRequest(chal, mode, cfg.er_min, cfg.er_max, cfg.or_min, cfg.or_max)
    vs.pending[chal] = req
    return req


def _take_request(vs: VerifierState, resp: AttResponse) -> AttRequest | Verdict:
    req = vs.pending.pop(resp.chal, None)
    if req is None:
        return Verdict(Reason.STALE_CHALLENGE, "challenge unknown or already used")
    if resp.status is not Status.OK:
        return Verdict(Reason.PROVER_SILENT, "prover aborted (reset) without a report")
    return req


def _mac_ok(vs: VerifierState, resp: AttResponse, scope: AttScope, regions: list[bytes]) -> bool:
    try:
        msg = canonical_encode(resp.chal, scope, resp.exec, resp.lmt, regions)
    except EncodingError:
        return False
    return _hmac.compare_digest(compute_mac(vs.key, msg), resp.mac)


def _pmem_region(vs: VerifierState, start: int, n: int) -> bytes:
    off = start - vs.fw.mmap.pmem.start
    return vs.expected_pmem[off:off + n]


def _verify_ra(vs, req, resp) -> Verdict:
    scope = AttScope.full_pmem(vs.fw.mmap)
    if resp.scope != scope.encode():
        return Verdict(Reason.PARSE_ERROR, "scope echo does not match the request")
    if not _mac_ok(vs, resp, scope, [vs.expected_pmem]):
        return Verdict(Reason.MAC_MISMATCH)
    return _ok(resp.output)


def _verify_rata(vs, req, resp) -> Verdict:
    scope = AttScope.lmt_only(vs.fw.mmap)
    if resp.scope != scope.encode():
        return Verdict(Reason.PARSE_ERROR, "scope echo does not match the request")
    if not _mac_ok(vs, resp, scope, [resp.lmt]):
        return Verdict(Reason.MAC_MISMATCH)
    if vs.rata_variant == "A":
        t = decode_time(resp.lmt)
        if t > vs.authorized_time and not vs.update_pending:
            return Verdict(Reason.LMT_MISMATCH, f"PMEM modified at t={t} after t={vs.authorized_time}")
        if vs.update_pending:
            vs.authorized_time, vs.update_pending = max(t, vs.authorized_time), False
        return _ok(resp.output)
    if vs.update_pending and resp.lmt == resp.chal:
        vs.last_update_chal, vs.update_pending = resp.lmt, False
        return _ok(resp.output)
    if resp.lmt != vs.last_update_chal:
        return Verdict(Reason.LMT_MISMATCH, f"LMT {resp.lmt.hex()} != {vs.last_update_chal.hex()}")
    return _ok(resp.output)


def _verify_pox(vs, req: AttRequest, resp) -> Verdict:
    cfg = req.apex
    scope = AttScope.pox(cfg, vs.fw.mmap)
    if resp.scope != scope.encode():
        return Verdict(Reason.PARSE_ERROR, "scope echo does not match the request")
    if len(resp.or_bytes) != cfg.or_bytes().length:
        return Verdict(Reason.PARSE_ERROR, "OR length does not match the requested bounds")
    meta = struct.pack("<HHHH", cfg.er_min, cfg.er_max, cfg.or_min, cfg.or_max)
    er = cfg.er_bytes()
    regions = [meta, _pmem_region(vs, er.start, er.length), resp.or_bytes, resp.lmt]
    if not _mac_ok(vs, resp, scope, regions):
        return Verdict(Reason.MAC_MISMATCH)
    if resp.exec != 1:
        return Verdict(Reason.EXEC_ZERO)
    return _ok(vs.fw.layout.view(resp.or_bytes).output)


def check_cf_path(fw: Firmware, log: list[int], return_pc: int | None = None) -> str | None:
    """Walk ``log`` over the original ER's CFG; returns None if legal, else why not.

    The walk is nondeterministic only at conditional branches, whose
    fall-through is not logged. States are (instruction, call stack, log position).
    """
    cfg = build_cfg(fw.er_original)
    code, labels = cfg.code, cfg.label_index
    at = fw.origin_index()
    idx = [at.get(a) for a in log]
    n, last = len(log), len(code) - 1
    seen: set = set()
    todo = [(0, (), 0)]
    furthest = 0
    while todo:
        st = todo.pop()
        if st in seen:
            continue
        seen.add(st)
        k, stack, pos = st
        furthest = max(furthest, pos)
        if k > last or len(stack) > 256:
            continue
        ins = code[k]
        op = ins.op
        nxt = idx[pos] if pos < n else None
        if op is Op.JMP:
            if nxt == labels[ins.imm]:
                todo.append((nxt, stack, pos + 1))
        elif op in COND_JUMPS:
            todo.append((k + 1, stack, pos))
            if nxt == labels[ins.imm]:
                todo.append((nxt, stack, pos + 1))
        elif op is Op.CALL:
            if nxt == labels[ins.imm]:
                todo.append((nxt, stack + (k + 1,), pos + 1))
        elif op is Op.JMPR:
            if nxt is not None and nxt in {labels[t] for t in ins.targets}:
                todo.append((nxt, stack, pos + 1))
        elif op is Op.RET:
            if pos >= n:
                continue
            if stack:
                if nxt == stack[-1]:
                    todo.append((nxt, stack[:-1], pos + 1))
            elif k == last and pos == n - 1 and (return_pc is None or log[pos] == return_pc):
                return None
        elif op is Op.HALT:
            continue
        else:
            todo.append((k + 1, stack, pos))
    if furthest >= n:
        return "log ends before the ER exit"
    return f"entry {furthest} (0x{log[furthest]:04x}) is not a legal destination"


def _verify_cfa(vs, req, resp) -> Verdict:
    v = _verify_pox(vs, req, resp)
    if not v.accepted:
        return v
    view = vs.fw.layout.view(resp.or_bytes)
    if view.cf_log is None:
        return Verdict(Reason.PATH_INVALID, "CF-Log cursor out of range")
    why = check_cf_path(vs.fw, view.cf_log, vs.fw.return_site)
    if why is not None:
        return Verdict(Reason.PATH_INVALID, why)
    return v


def replay_er(fw: Firmware, i_log: list[tuple[int, int]], max_steps: int = 500_000) -> bytes:
    """Re-execute the ER locally, feeding logged loads from ``i_log``; returns OR bytes.

    Raises:
        ReplayError: the log runs out, or a logged address disagrees.
    """
    mcu = boot(fw)
    write_metadata(mcu, fw.er_cfg)
    sites = set(fw.assembled.tagged("dfa_load"))
    entries = iter(i_log)

    def hook(pc: int, addr: int) -> int | None:
        if pc not in sites:
            return None
        try:
            a, v = next(entries)
        except StopIteration:
            raise ReplayError("I-Log exhausted") from None
        if a != addr:
            raise ReplayError(f"I-Log address 0x{a:04x} != load address 0x{addr:04x}")
        return v

    mcu.replay_hook = hook
    # enter through run_attest so the logged return site matches the prover's
    done = fw.return_site
    mcu.state.pc = fw.sym("run_attest")
    mcu.run(max_steps, until=lambda m: m.state.pc == done)
    if mcu.state.pc != done:
        raise ReplayError("replay did not leave the ER")
    r = fw.layout.region
    return bytes(mcu.state.mem[r.start:r.end])


def _verify_dfa(vs, req, resp) -> Verdict:
    v = _verify_cfa(vs, req, resp)
    if not v.accepted:
        return v
    layout = vs.fw.layout
    got = layout.view(resp.or_bytes)
    if got.i_log is None:
        return Verdict(Reason.DATA_REPLAY_MISMATCH, "I-Log cursor out of range")
    try:
        mine = layout.view(replay_er(vs.fw, got.i_log))
    except ReplayError as e:
        return Verdict(Reason.DATA_REPLAY_MISMATCH, str(e))
    for what, a, b in (("output", mine.output, got.output), ("CF-Log", mine.cf_log, got.cf_log),
                       ("I-Log", mine.i_log, got.i_log)):
        if a != b:
            return Verdict(Reason.DATA_REPLAY_MISMATCH, f"replayed {what} differs")
    return v


_CHECKS = {"ra": _verify_ra, "rata": _verify_rata, "pox": _verify_pox,
           "cfa": _verify_cfa, "dfa": _verify_dfa}
KIND_MODE = {"ra": Mode.FULL_PMEM, "rata": Mode.LMT_ONLY, "pox": Mode.POX,
             "cfa": Mode.POX, "dfa": Mode.POX}


def verify(vs: VerifierState, resp: AttResponse | None, kind: str) -> Verdict:
    if resp is None:
        return Verdict(Reason.PROVER_SILENT, "no response")
    req = _take_request(vs, resp)
    if isinstance(req, Verdict):
        return req
    if KIND_MODE[kind] is not req.mode:
        return Verdict(Reason.PARSE_ERROR, f"{kind} verification of a {req.mode.value} request")
    return _CHECKS[kind](vs, req, resp)


def verify_ra(vs, resp):
    return verify(vs, resp, "ra")


def verify_rata(vs, resp):
    return verify(vs, resp, "rata")


def verify_pox(vs, resp):
    return verify(vs, resp, "pox")


def verify_cfa(vs, resp):
    return verify(vs, resp, "cfa")


def verify_dfa(vs, resp):
    return verify(vs, resp, "dfa")


def verify_frame(vs: VerifierState, frame: bytes | None, kind: str) -> Verdict:
    if frame is None:
        return Verdict(Reason.PROVER_SILENT, "no response")
    try:
        msg = decode_message(frame)
    except (FrameError, EncodingError) as e:
        return Verdict(Reason.PARSE_ERROR, str(e))
    if not isinstance(msg, AttResponse):
        return Verdict(Reason.PARSE_ERROR, "expected a response")
    return verify(vs, msg, kind)


# --- prover ------------------------------------------------------------------------

Tick = Callable[[Mcu], None]


def scope_for(req: AttRequest, mcu: Mcu) -> AttScope:
    if req.mode is Mode.POX:
        return AttScope.pox(req.apex, mcu.mmap)
    if req.mode is Mode.LMT_ONLY:
        return AttScope.lmt_only(mcu.mmap)
    return AttScope.full_pmem(mcu.mmap)


def read_or(mcu: Mcu, fw: Firmware) -> bytes:
    r = fw.layout.region
    return bytes(mcu.state.mem[r.start:r.end])


def run_until_report(mcu: Mcu, tick: Tick | None = None, max_steps: int = 500_000) -> bool:
    """Step (calling ``tick`` first) until SW-Att emits a report; False on reset/halt."""
    resets = mcu.state.resets
    for _ in range(max_steps):
        if tick is not None:
            tick(mcu)
        if mcu.state.halted:
            return False
        mcu.step()
        if mcu.state.resets != resets:
            return False
        if mcu.state.att_out is not None:
            return True
    return False


def prover_handle(mcu: Mcu, fw: Firmware, req: AttRequest, tick: Tick | None = None,
                  run_app: bool = True) -> AttResponse:
    """Honest prover: program metadata (PoX), run the ER, then SW-Att."""
    if req.mode is Mode.POX:
        write_metadata(mcu, req.apex)
    else:
        write_metadata(mcu, fw.er_cfg)
    write_challenge(mcu, req.chal)
    mcu.swatt.request(scope_for(req, mcu))
    mcu.state.att_out = None
    mcu.state.pc = fw.sym("run_attest" if run_app else "attest")
    if not run_until_report(mcu, tick):
        mcu.swatt.request(None)
        return AttResponse(Status.ABORTED, req.chal)
    report = mcu.state.att_out
    mcu.state.att_out = None
    return AttResponse.from_report(report, read_or(mcu, fw)[:fw.layout.output.length])


Responder = Callable[["Prover", AttRequest], AttResponse]


@dataclass
class Prover:
    mcu: Mcu
    fw: Firmware
    responder: Responder | None = None
    tick: Tick | None = None

    def handle(self, req: AttRequest) -> AttResponse:
        if self.responder is not None:
            return self.responder(self, req)
        return prover_handle(self.mcu, self.fw, req, self.tick)

    def handle_frame(self, frame: bytes) -> bytes:
        msg = decode_message(frame)
        if not isinstance(msg, AttRequest):
            raise FrameError("prover expects a request")
        return encode_message(self.handle(msg))


# --- transports --------------------------------------------------------------------

class MemEndpoint:
    def __init__(self, inbox: collections.deque, outbox: collections.deque, drop: set[int]):
        self._in, self._out, self._drop = inbox, outbox, drop
        self.sent = 0

    def send(self, frame: bytes) -> None:
        i = self.sent
        self.sent += 1
        if i not in self._drop:
            self._out.append(bytes(frame))

    def recv(self) -> bytes | None:
        return self._in.popleft() if self._in else None


def mem_channel(drop_verifier: set[int] = frozenset(), drop_prover: set[int] = frozenset()):
    """In-order, lossless duplex pair; ``drop_*`` script losses by send index."""
    a, b = collections.deque(), collections.deque()
    return MemEndpoint(a, b, set(drop_verifier)), MemEndpoint(b, a, set(drop_prover))


class Session:
    """Drives one request/response exchange over a transport."""

    def exchange(self, frame: bytes) -> bytes | None:  # pragma: no cover - interface
        raise NotImplementedError

    def close(self) -> None:
        pass


class MemSession(Session):
    def __init__(self, prover: Prover, drop_requests: set[int] = frozenset(),
                 drop_responses: set[int] = frozenset()):
        self.prover = prover
        self.v, self.p = mem_channel(drop_requests, drop_responses)

    def exchange(self, frame: bytes) -> bytes | None:
        self.v.send(frame)
        got = self.p.recv()
        if got is not None:
            self.p.send(self.prover.handle_frame(got))
        return self.v.recv()


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def read_frame(sock: socket.socket) -> bytes | None:
    head = _recv_exact(sock, HEADER.size)
    if head is None:
        return None
    _, n = HEADER.unpack(head)
    if n > MAX_PAYLOAD:
        raise FrameError("payload too large")
    body = _recv_exact(sock, n)
    return None if body is None else head + body


class TcpProverServer:
    """Serve a :class:`Prover` over TCP on localhost, one frame per request."""

    def __init__(self, prover: Prover, host: str = "127.0.0.1", port: int = 0):
        outer = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self) -> None:
                while True:
                    frame = read_frame(self.request)
                    if frame is None:
                        return
                    with outer.lock:
                        reply = prover.handle_frame(frame)
                    self.request.sendall(reply)

        self.lock = threading.Lock()
        self.server = socketserver.ThreadingTCPServer((host, port), Handler)
        self.server.daemon_threads = True
        self.address = self.server.server_address
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    def close(self) -> None:
        self.server.shutdown()
        self.server.server_close()


class TcpSession(Session):
    def __init__(self, prover: Prover, timeout: float = 30.0):
        self.server = TcpProverServer(prover)
        self.sock = socket.create_connection(self.server.address, timeout=timeout)

    def exchange(self, frame: bytes) -> bytes | None:
        self.sock.sendall(frame)
        try:
            return read_frame(self.sock)
        except socket.timeout:
            return None

    def close(self) -> None:
        self.sock.close()
        self.server.close()


def open_session(prover: Prover, transport: str = "mem") -> Session:
    if transport == "mem":
        return MemSession(prover)
    if transport == "tcp":
        return TcpSession(prover)
    raise ValueError(f"unknown transport {transport!r}")


# --- verifier database -------------------------------------------------------------

class VerifierDb:
    """Directory of expected images plus ``db.json`` metadata.

    Each entry records the image file, its SHA-256 and the counter of the
    last authorized update.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.meta_path = self.root / "db.json"
        self.meta: dict = json.loads(self.meta_path.read_text()) if self.meta_path.exists() else {}

    def _save(self) -> None:
        self.meta_path.write_text(json.dumps(self.meta, indent=2, sort_keys=True) + "\n")

    def add(self, image_id: str, image: bytes, last_update_counter: int = 0) -> None:
        from .memmap import save_image

        fname = f"{image_id}.bin"
        save_image(self.root / fname, image)
        self.meta[image_id] = {"file": fname, "sha256": hashlib.sha256(image).hexdigest(),
                               "last_update_counter": last_update_counter}
        self._save()

    def image(self, image_id: str) -> bytes:
        ent = self.meta[image_id]
        data = (self.root / ent["file"]).read_bytes()
        if hashlib.sha256(data).hexdigest() != ent["sha256"]:
            raise ValueError(f"image {image_id!r} does not match its recorded hash")
        return data

    def ids(self) -> list[str]:
        return sorted(self.meta)

    def record_update(self, image_id: str, counter: int) -> None:
        self.meta[image_id]["last_update_counter"] = counter
        self._save()


def core_write(mcu: Mcu, addr: int, words) -> None:
    """Store issued by software at the current PC (used by adversarial responders)."""
    mcu.external_write(addr, words, Agent.CORE)
