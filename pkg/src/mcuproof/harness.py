"""Scenario runner: architecture x attack script -> verdict trail and evidence log.

A scenario file (YAML, ``schema: 1``)::

    schema: 1
    name: cf-tinycfa
    arch: tinycfa                 # column name, or a list of features
    app: threshold
    attack: control_flow
    expect: {outcome: detected, reason: PathInvalid}
    inputs: [9, 50, 50, 50, 50, 0, 0, 0, 0, "@alarm_on", 4]
    actions:
      - {cycle: 100, kind: write_mem, addr: 0x3ff4, words: [150]}
    attest:
      - {cycle: 400, responder: honest}

Cycles count from the end of boot. Addresses may be integers, firmware
symbols, or ``symbol+offset``. Inputs written ``"@sym"`` resolve to the
symbol's address in the built image.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .asm import assemble, parse
from .bus import Agent
from .firmware import ARCHS, APPS, FeatureError, Firmware, boot, build_firmware, check_features, \
    verification_kind
from .ief import AttScope, Mode, canonical_encode, compute_mac, cost, ief_run
from .mcu import DEFAULT_KEY, Mcu
from .memmap import DEFAULT_MAP
from .monitors import MonitorBank
from .protocol import (KIND_MODE, AttRequest, AttResponse, Prover, Status, VerifierState, core_write,
                       encode_message, open_session, prover_handle, read_or, scope_for,
                       verifier_issue, verify_frame)

SCHEMA = 1
ATTACKS = ("modified_code", "provable_execution", "control_flow", "data_flow", "toctou")
ATTACK_LABELS = {
    "modified_code": "Modified Code",
    "provable_execution": "Provable Execution",
    "control_flow": "Control-Flow Attack",
    "data_flow": "Data-Flow Attack",
    "toctou": "TOCTOU",
}
COLUMNS = ("baseline", "vrased", "apex", "tinycfa", "dialed", "rata")
ACTION_KINDS = ("write_mem", "program_dma", "raise_irq", "replace_pmem", "restore_pmem",
                "corrupt_stack", "feed_input")

_D, _M = True, False
# Expected detection pattern, rows x COLUMNS.
EXPECTED_MATRIX: dict[str, tuple[bool, ...]] = {
    "modified_code":      (_M, _D, _D, _D, _D, _D),
    "provable_execution": (_M, _M, _D, _D, _D, _M),
    "control_flow":       (_M, _M, _M, _D, _D, _M),
    "data_flow":          (_M, _M, _M, _M, _D, _M),
    "toctou":             (_M, _M, _M, _M, _M, _D),
}

RESTORE_WAIT = 10_000
LEAK_ADDR = 0x3800


class ConfigError(ValueError):
    def __init__(self, msg: str, line: int | None = None, path: str | None = None):
        self.line, self.path = line, path
        where = f"{path or '<scenario>'}:{line}: " if line else (f"{path}: " if path else "")
        super().__init__(where + msg)


class IncompleteMatrix(RuntimeError):
    def __init__(self, missing: list[tuple[str, str]]):
        self.missing = missing
        super().__init__("missing scenarios: " + ", ".join(f"{a}/{c}" for a, c in missing))


# --- loading -----------------------------------------------------------------------

class _LineLoader(yaml.SafeLoader):
    pass


def _mapping_with_line(loader, node):
    d = loader.construct_mapping(node, deep=True)
    d["__line__"] = node.start_mark.line + 1
    return d


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _mapping_with_line)


@dataclass
class Action:
    cycle: int
    kind: str
    addr: int | str | None = None
    words: list = field(default_factory=list)
    asm: str | None = None
    length: int = 0
    agent: str = "core"
    line: int | None = None


@dataclass
class AttestPoint:
    cycle: int
    responder: str = "honest"
    line: int | None = None


@dataclass
class Scenario:
    name: str
    features: frozenset[str]
    app: str
    attack: str
    expect_detected: bool
    expect_reason: str | None
    inputs: list
    actions: list[Action]
    attest: list[AttestPoint]
    arch: str | None = None
    path: str | None = None

    @property
    def column(self) -> str | None:
        if self.arch in COLUMNS:
            return self.arch
        for name, feats in ARCHS.items():
            if feats == self.features:
                return name
        return None


def _int(v, what: str, line: int | None, path: str | None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{what} must be an integer, got {v!r}", line, path)
    return v


def parse_scenario(text: str, path: str | None = None) -> Scenario:
    try:
        doc = yaml.load(text, Loader=_LineLoader)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"YAML error: {getattr(e, 'problem', e)}",
                          mark.line + 1 if mark else None, path) from None
    if not isinstance(doc, dict):
        raise ConfigError("scenario must be a mapping", 1, path)
    line = doc.get("__line__")

    def need(d: dict, key: str):
        if key not in d:
            raise ConfigError(f"missing field {key!r}", d.get("__line__"), path)
        return d[key]

    known = {"schema", "name", "arch", "app", "attack", "expect", "inputs", "actions", "attest",
             "description", "__line__"}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"unknown fields {sorted(extra)}", line, path)
    if need(doc, "schema") != SCHEMA:
        raise ConfigError(f"unsupported schema {doc['schema']!r} (expected {SCHEMA})", line, path)
    arch = need(doc, "arch")
    if isinstance(arch, str):
        if arch not in ARCHS:
            raise ConfigError(f"unknown arch {arch!r}", line, path)
        feats, arch_name = ARCHS[arch], arch
    elif isinstance(arch, list):
        try:
            feats = check_features(arch)
        except FeatureError as e:
            raise ConfigError(str(e), line, path) from None
        arch_name = None
    else:
        raise ConfigError("arch must be a name or a feature list", line, path)
    app = need(doc, "app")
    if app not in APPS:
        raise ConfigError(f"unknown app {app!r}", line, path)
    attack = need(doc, "attack")
    if attack not in ATTACKS:
        raise ConfigError(f"unknown attack class {attack!r}", line, path)
    exp = need(doc, "expect")
    if isinstance(exp, str):
        exp = {"outcome": exp}
    if not isinstance(exp, dict) or exp.get("outcome") not in ("detected", "missed"):
        raise ConfigError("expect.outcome must be 'detected' or 'missed'", line, path)
    inputs = doc.get("inputs", [])
    if not isinstance(inputs, list):
        raise ConfigError("inputs must be a list", line, path)
    for v in inputs:
        if not (isinstance(v, int) and not isinstance(v, bool)) and not (
                isinstance(v, str) and v.startswith("@")):
            raise ConfigError(f"input {v!r} must be an integer or '@symbol'", line, path)

    actions = []
    for a in doc.get("actions", []) or []:
        if not isinstance(a, dict):
            raise ConfigError("each action must be a mapping", line, path)
        al = a.get("__line__")
        kind = need(a, "kind")
        if kind not in ACTION_KINDS:
            raise ConfigError(f"unknown action kind {kind!r}", al, path)
        act = Action(_int(need(a, "cycle"), "cycle", al, path), kind, a.get("addr"),
                     list(a.get("words", []) or []), a.get("asm"), int(a.get("length", 0)),
                     a.get("agent", "core"), al)
        if act.agent not in ("core", "dma"):
            raise ConfigError(f"agent must be core or dma, got {act.agent!r}", al, path)
        if kind in ("write_mem", "corrupt_stack", "program_dma") and act.addr is None:
            raise ConfigError(f"{kind} needs addr", al, path)
        if kind == "replace_pmem" and (act.addr is None or (not act.words and not act.asm)):
            raise ConfigError("replace_pmem needs addr and words or asm", al, path)
        if kind == "program_dma" and (act.length <= 0 or "dst" not in a):
            raise ConfigError("program_dma needs dst and a positive length", al, path)
        if kind == "program_dma":
            act.words = [a["dst"]]
        actions.append(act)
    points = []
    for p in need(doc, "attest") or []:
        pl = p.get("__line__") if isinstance(p, dict) else line
        if not isinstance(p, dict):
            raise ConfigError("each attest entry must be a mapping", pl, path)
        resp = p.get("responder", "honest")
        if resp not in RESPONDERS:
            raise ConfigError(f"unknown responder {resp!r}", pl, path)
        points.append(AttestPoint(_int(need(p, "cycle"), "cycle", pl, path), resp, pl))
    if not points:
        raise ConfigError("at least one attestation is required", line, path)
    return Scenario(need(doc, "name"), feats, app, attack, exp["outcome"] == "detected",
                    exp.get("reason"), inputs, sorted(actions, key=lambda x: x.cycle),
                    sorted(points, key=lambda x: x.cycle), arch_name, path)


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(str(e), None, str(p)) from None
    return parse_scenario(text, str(p))


def shipped_scenarios() -> Path:
    """Directory of the bundled 5x6 suite."""
    return Path(str(resources.files("mcuproof") / "scenarios"))


# --- address resolution --------------------------------------------------------------

def resolve(fw: Firmware, v, line: int | None = None) -> int:
    if isinstance(v, int) and not isinstance(v, bool):
        return v & 0xFFFF
    if isinstance(v, str):
        name = v.lstrip("@")
        off = 0
        if "+" in name:
            name, o = name.split("+", 1)
            off = int(o, 0)
        if name in fw.symbols:
            return (fw.symbols[name] + off) & 0xFFFF
    raise ConfigError(f"cannot resolve address {v!r}", line)


# --- adversarial responders ---------------------------------------------------------

def honest(prover: Prover, req: AttRequest) -> AttResponse:
    return prover_handle(prover.mcu, prover.fw, req, prover.tick)


def forge_if_leaked(prover: Prover, req: AttRequest) -> AttResponse:
    """If the key was exfiltrated to LEAK_ADDR, forge a report over pristine PMEM."""
    mcu, fw = prover.mcu, prover.fw
    key = bytes(mcu.state.mem[LEAK_ADDR:LEAK_ADDR + len(DEFAULT_KEY)])
    if not any(key):
        return honest(prover, req)
    scope = scope_for(req, mcu)
    pristine = bytearray(mcu.state.mem)
    p = mcu.mmap.pmem
    pristine[p.start:p.start + len(fw.image)] = fw.image
    lmt = bytes(16)
    pristine[mcu.mmap.lmt.start:mcu.mmap.lmt.end] = lmt
    if req.mode is Mode.POX:
        pristine[mcu.mmap.meta.start:mcu.mmap.meta.end] = struct.pack(
            "<HHHH", req.er_min, req.er_max, req.or_min, req.or_max)
    regions = [bytes(pristine[s:s + n]) for s, n in scope.regions]
    exec_ = 1 if scope.includes_exec else 0
    mac = compute_mac(key, canonical_encode(req.chal, scope, exec_, lmt, regions))
    or_bytes = regions[2] if req.mode is Mode.POX else b""
    out = read_or(mcu, fw)[:fw.layout.output.length]
    return AttResponse(Status.OK, req.chal, mac, exec_, lmt, scope.encode(), or_bytes, out)


FAKE_OUTPUT = (0x0123, 0x0000)


def skip_er(prover: Prover, req: AttRequest) -> AttResponse:
    """Claim an output without running the ER: plant it in OR, then attest."""
    mcu, fw = prover.mcu, prover.fw
    core_write(mcu, fw.layout.output.start, list(FAKE_OUTPUT))
    from .firmware import write_metadata
    from .ief import write_challenge

    if req.mode is Mode.POX:
        write_metadata(mcu, req.apex)
    write_challenge(mcu, req.chal)
    mcu.swatt.request(scope_for(req, mcu))
    mcu.state.att_out = None
    from .protocol import run_until_report

    mcu.state.pc = fw.sym("attest")
    if not run_until_report(mcu, prover.tick):
        return AttResponse(Status.ABORTED, req.chal)
    r = mcu.state.att_out
    mcu.state.att_out = None
    return AttResponse.from_report(r, read_or(mcu, fw)[:fw.layout.output.length])


RESPONDERS = {"honest": honest, "forge_if_leaked": forge_if_leaked, "skip_er": skip_er}


# --- running -------------------------------------------------------------------------

@dataclass
class ScenarioResult:
    scenario: Scenario
    verdicts: list
    evidence: list[dict]
    detected: bool
    matched: bool

    @property
    def outcome(self) -> str:
        return "detected" if self.detected else "missed"

    def evidence_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.evidence)

    def to_dict(self) -> dict:
        s = self.scenario
        return {"name": s.name, "attack": s.attack, "arch": s.column or sorted(s.features),
                "outcome": self.outcome,
                "expected": "detected" if s.expect_detected else "missed",
                "matched": self.matched, "verdicts": [v.to_dict() for v in self.verdicts],
                "evidence_sha256": hashlib.sha256(self.evidence_jsonl().encode()).hexdigest()}


class _Timeline:
    """Applies cycle-stamped actions to a running prover."""

    def __init__(self, sc: Scenario, fw: Firmware, mcu: Mcu, base: int, log: list[dict]):
        self.sc, self.fw, self.mcu, self.base, self.log = sc, fw, mcu, base, log
        self.queue = list(sc.actions)
        self.waited = 0

    def now(self) -> int:
        return self.mcu.state.cycles - self.base

    def due(self) -> bool:
        return bool(self.queue) and self.queue[0].cycle <= self.now()

    def tick(self, mcu: Mcu) -> None:
        while self.due():
            if not self._apply(self.queue[0]):
                return
            self.queue.pop(0)

    def _agent(self, a: Action) -> Agent:
        return Agent.DMA if a.agent == "dma" else Agent.CORE

    def _write(self, a: Action, addr: int, words: list[int]) -> None:
        res = self.mcu.external_write(addr, words, self._agent(a))
        resets = [r for r in res if r.reset]
        self._note(a, addr=addr, words=len(words),
                   reset=[v.value for v in resets[0].violations] if resets else None)

    def _note(self, a: Action, **kw) -> None:
        self.log.append({"event": "action", "cycle": self.now(), "kind": a.kind, **kw})

    def _apply(self, a: Action) -> bool:
        fw, mcu = self.fw, self.mcu
        line = a.line
        if a.kind == "write_mem":
            self._write(a, resolve(fw, a.addr, line), [resolve(fw, w, line) for w in a.words])
        elif a.kind == "corrupt_stack":
            addr = (mcu.state.sp + resolve(fw, a.addr, line)) & 0xFFFF
            self._write(a, addr, [resolve(fw, w, line) for w in a.words])
        elif a.kind == "replace_pmem":
            addr = resolve(fw, a.addr, line)
            if a.asm is not None:
                try:
                    code = assemble(parse(a.asm), addr, fw.symbols).image(addr)
                except Exception as e:  # assembler diagnostics carry their own detail
                    raise ConfigError(f"replace_pmem asm: {e}", line, self.sc.path) from None
                words = list(struct.unpack(f"<{len(code) // 2}H", code + bytes(len(code) & 1)))
            else:
                words = [resolve(fw, w, line) for w in a.words]
            self._write(a, addr, words)
        elif a.kind == "restore_pmem":
            return self._restore(a)
        elif a.kind == "program_dma":
            src, dst = resolve(fw, a.addr, line), resolve(fw, a.words[0], line)
            mcu.dma_program(src, dst, a.length)
            self._note(a, src=src, dst=dst, length=a.length)
        elif a.kind == "raise_irq":
            mcu.trigger_interrupt()
            self._note(a)
        elif a.kind == "feed_input":
            vals = [resolve(fw, w, line) for w in a.words]
            mcu.feed_input(vals)
            self._note(a, words=len(vals))
        return True

    def _restore(self, a: Action) -> bool:
        """Rewrite PMEM words that differ from the image, once the PC is clear of them."""
        mcu, fw = self.mcu, self.fw
        p = mcu.mmap.pmem
        cur = mcu.state.mem[p.start:p.start + len(fw.image)]
        dirty = [p.start + i for i in range(0, len(fw.image), 2) if cur[i:i + 2] != fw.image[i:i + 2]]
        pc = mcu.state.pc
        if any(d - 4 < pc <= d + 1 for d in dirty):
            self.waited += 1
            if self.waited > RESTORE_WAIT:
                raise ConfigError("restore_pmem: PC never left the modified code", a.line,
                                  self.sc.path)
            return False
        for d in dirty:
            off = d - p.start
            mcu.external_write(d, [int.from_bytes(fw.image[off:off + 2], "little")],
                               self._agent(a))
        self._note(a, words=len(dirty))
        return True


def _advance(mcu: Mcu, tl: _Timeline, until: int, cap: int = 1_000_000) -> None:
    for _ in range(cap):
        tl.tick(mcu)
        if tl.now() >= until and not tl.due():
            return
        if mcu.state.halted:
            return
        mcu.step()


def _bank_evidence(mcu: Mcu, since: int) -> list[dict]:
    return [{"event": "monitor", "cycle": e.cycle,
             "violations": [v.value for v in e.violations], "pc": e.signal.pc}
            for e in mcu.bank.evidence[since:]]


def run_scenario(sc: Scenario | str | Path, transport: str = "mem", seed: int = 0) -> ScenarioResult:
    """Run one scenario end to end. Deterministic for a given ``seed``."""
    if not isinstance(sc, Scenario):
        sc = load_scenario(sc)
    try:
        fw = build_firmware(sc.app, sc.features, name=sc.app)
    except Exception as e:
        raise ConfigError(f"cannot build firmware: {e}", None, sc.path) from None
    mcu = boot(fw, MonitorBank.for_arch(sc.features))
    mcu.feed_input([resolve(fw, v) for v in sc.inputs])
    kind = verification_kind(sc.features)
    vs = VerifierState(DEFAULT_KEY, fw, seed=seed)
    log: list[dict] = [{"event": "start", "scenario": sc.name, "arch": sorted(sc.features),
                        "app": sc.app, "attack": sc.attack, "verification": kind, "seed": seed}]
    tl = _Timeline(sc, fw, mcu, mcu.state.cycles, log)
    prover = Prover(mcu, fw, tick=tl.tick)
    session = open_session(prover, transport)
    verdicts = []
    ev_mark = 0
    try:
        for point in sc.attest:
            _advance(mcu, tl, point.cycle)
            prover.responder = RESPONDERS[point.responder]
            req = verifier_issue(vs, KIND_MODE[kind])
            log.append({"event": "request", "cycle": tl.now(), "mode": req.mode.value,
                        "chal": req.chal.hex(), "responder": point.responder})
            frame = session.exchange(encode_message(req))
            log.extend(_bank_evidence(mcu, ev_mark))
            ev_mark = len(mcu.bank.evidence)
            v = verify_frame(vs, frame, kind)
            if frame is not None:
                log.append({"event": "response", "cycle": tl.now(),
                            "sha256": hashlib.sha256(frame).hexdigest()})
            log.append({"event": "verdict", **v.to_dict()})
            verdicts.append(v)
    finally:
        session.close()
    log.extend(_bank_evidence(mcu, ev_mark))
    detected = any(not v.accepted for v in verdicts)
    matched = detected == sc.expect_detected
    if matched and sc.expect_reason is not None:
        reasons = {v.reason.value for v in verdicts}
        matched = sc.expect_reason in reasons
    log.append({"event": "end", "outcome": "detected" if detected else "missed", "matched": matched})
    return ScenarioResult(sc, verdicts, log, detected, matched)


def write_evidence(result: ScenarioResult, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p = out / f"{result.scenario.name}.jsonl"
    p.write_text(result.evidence_jsonl())
    return p


# --- matrix -------------------------------------------------------------------------

@dataclass
class MatrixReport:
    cells: dict[tuple[str, str], bool]
    results: dict[tuple[str, str], ScenarioResult]
    evidence: dict[tuple[str, str], str] = field(default_factory=dict)

    def deviations(self) -> list[tuple[str, str, bool, bool]]:
        out = []
        for atk in ATTACKS:
            for i, col in enumerate(COLUMNS):
                got, want = self.cells[(atk, col)], EXPECTED_MATRIX[atk][i]
                res = self.results[(atk, col)]
                if got != want or not res.matched:
                    out.append((atk, col, got, want))
        return out

    @property
    def ok(self) -> bool:
        return not self.deviations()

    def format(self) -> str:
        w = max(len(v) for v in ATTACK_LABELS.values())
        head = " " * w + " | " + " | ".join(f"{c:^8}" for c in COLUMNS)
        lines = [head, "-" * len(head)]
        for atk in ATTACKS:
            cells = []
            for i, col in enumerate(COLUMNS):
                got = self.cells[(atk, col)]
                mark = "detected" if got else "missed"
                if got != EXPECTED_MATRIX[atk][i]:
                    mark = mark.upper()
                cells.append(f"{mark:^8}")
            lines.append(f"{ATTACK_LABELS[atk]:<{w}} | " + " | ".join(cells))
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "columns": list(COLUMNS),
            "rows": [{"attack": atk, "label": ATTACK_LABELS[atk],
                      "cells": {col: ("detected" if self.cells[(atk, col)] else "missed")
                                for col in COLUMNS},
                      "expected": {col: ("detected" if EXPECTED_MATRIX[atk][i] else "missed")
                                   for i, col in enumerate(COLUMNS)},
                      "scenarios": {col: self.results[(atk, col)].to_dict() for col in COLUMNS},
                      "evidence": {col: self.evidence.get((atk, col)) for col in COLUMNS}}
                     for atk in ATTACKS],
            "deviations": [{"attack": a, "arch": c, "got": g, "expected": e}
                           for a, c, g, e in self.deviations()],
            "ok": self.ok,
        }


def load_suite(directory: str | Path) -> dict[tuple[str, str], Scenario]:
    suite: dict[tuple[str, str], Scenario] = {}
    for p in sorted(Path(directory).glob("*.yaml")):
        sc = load_scenario(p)
        col = sc.column
        if col is None:
            raise ConfigError("matrix scenarios must use a column architecture", None, str(p))
        if (sc.attack, col) in suite:
            raise ConfigError(f"duplicate scenario for {sc.attack}/{col}", None, str(p))
        suite[(sc.attack, col)] = sc
    missing = [(a, c) for a in ATTACKS for c in COLUMNS if (a, c) not in suite]
    if missing:
        raise IncompleteMatrix(missing)
    return suite


def run_matrix(directory: str | Path | None = None, transport: str = "mem", seed: int = 0,
               evidence_dir: str | Path | None = None) -> MatrixReport:
    suite = load_suite(directory or shipped_scenarios())
    cells, results, evidence = {}, {}, {}
    for key, sc in suite.items():
        r = run_scenario(sc, transport, seed)
        cells[key], results[key] = r.detected, r
        if evidence_dir is not None:
            evidence[key] = str(write_evidence(r, evidence_dir))
    return MatrixReport(cells, results, evidence)


# --- RATA cost benchmark -----------------------------------------------------------

@dataclass(frozen=True)
class BenchRow:
    pmem_bytes: int
    full_words: int
    full_cycles: int
    lmt_words: int
    lmt_cycles: int

    @property
    def ratio(self) -> float:
        return self.full_cycles / self.lmt_cycles

    def to_dict(self) -> dict:
        return {"pmem_bytes": self.pmem_bytes, "full_words": self.full_words,
                "full_cycles": self.full_cycles, "lmt_words": self.lmt_words,
                "lmt_cycles": self.lmt_cycles, "ratio": round(self.ratio, 4)}


class BenchError(AssertionError):
    pass


def _measure(size: int, scope_of) -> tuple[int, int]:
    mmap = DEFAULT_MAP.with_pmem_size(size)
    mcu = Mcu(mmap, MonitorBank.for_arch({"vrased", "rata_b"}, mmap))
    idle = assemble(parse("idle:\n    JMP idle\n"), mmap.pmem.start).image(mmap.pmem.start)
    mcu.load(idle)
    scope = scope_of(mmap)
    _, cycles = ief_run(mcu, bytes(16), scope, return_pc=mmap.pmem.start)
    return scope.words, cycles


def bench_rata(sizes=(1024, 2048, 4096, 8192)) -> list[BenchRow]:
    """Full-sweep vs LMT-only SW-Att cycles per PMEM size, measured in the emulator.

    Raises:
        BenchError: lmt_only is not constant, or full-sweep is not affine.
    """
    rows = []
    for size in sizes:
        fw_, fc = _measure(size, AttScope.full_pmem)
        lw, lc = _measure(size, AttScope.lmt_only)
        rows.append(BenchRow(size, fw_, fc, lw, lc))
    if len({r.lmt_cycles for r in rows}) != 1:
        raise BenchError("lmt_only cycles vary with PMEM size")
    for r in rows:
        if r.full_cycles != cost(r.full_words):
            raise BenchError(f"full sweep at {r.pmem_bytes} B is not {cost(r.full_words)} cycles")
    return rows


def format_bench(rows: list[BenchRow]) -> str:
    out = [f"{'PMEM':>6} | {'full words':>10} | {'full cycles':>11} | {'lmt cycles':>10} | ratio"]
    for r in rows:
        out.append(f"{r.pmem_bytes:>6} | {r.full_words:>10} | {r.full_cycles:>11} | "
                   f"{r.lmt_cycles:>10} | {r.ratio:.2f}")
    return "\n".join(out)
