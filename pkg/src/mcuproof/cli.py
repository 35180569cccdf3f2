"""Command-line entry point: ``mcuproof {asm,instrument,run,matrix,bench,report}``.

Every command prints a human summary and can write a JSON twin with ``--json``.
Exit codes: 0 success or expectations met, 1 an expectation failed,
2 configuration or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .asm import AsmError, assemble, format_program, parse
from .firmware import APPS, ARCHS, app_source, build_firmware, run_er
from .harness import (ConfigError, IncompleteMatrix, BenchError, bench_rata, format_bench,
                      run_matrix, run_scenario, shipped_scenarios, write_evidence)
from .instrument import InstrumentError, aggregate_overhead, format_overhead, measure_overhead
from .memmap import save_image

BENIGN = {
    "threshold": [[4, 50, 60, 70, 80, 4], [4, 200, 150, 100, 90, 4], [2, 10, 20, 2]],
    "pump": [[3, 10, 20, 30], [5, 1, 2, 3, 4, 5], [1, 900]],
    "ranger": [[5800, 0], [5800, 1], [11000, 1]],
}


def _dump(path: str | None, obj) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_source(arg: str) -> tuple[str, str]:
    if arg in APPS:
        return arg, app_source(arg)
    p = Path(arg)
    return p.stem, p.read_text()


def cmd_asm(a) -> int:
    src = Path(a.source).read_text()
    out = assemble(parse(src), a.origin)
    lo = min(out.segments) if a.origin is None else a.origin
    image = out.image(lo)
    if a.output:
        save_image(a.output, image)
    print(f"{len(image)} bytes at 0x{lo:04x}, {len(out.symbols)} symbols")
    _dump(a.json, {"base": lo, "size": len(image),
                   "symbols": {k: v for k, v in sorted(out.symbols.items())}})
    return 0


def cmd_instrument(a) -> int:
    name, src = _read_source(a.app)
    arch = {"cfa": "tinycfa", "dfa": "dialed"}[a.mode]
    fw = build_firmware(src, ARCHS[arch], name=name)
    text = format_program(fw.er)
    if a.output:
        Path(a.output).write_text(text)
    else:
        sys.stdout.write(text)
    plain = build_firmware(src, ARCHS["apex"], name=name)
    row = measure_overhead(plain, fw, BENIGN.get(name, [[]]), name, a.mode)
    print(format_overhead([row]), file=sys.stderr, end="")
    _dump(a.json, row.to_dict())
    return 0


def cmd_run(a) -> int:
    r = run_scenario(a.scenario, a.transport, a.seed)
    for v in r.verdicts:
        print(f"verdict: {v.reason.value}" + (f" ({v.detail})" if v.detail else ""))
    want = "detected" if r.scenario.expect_detected else "missed"
    print(f"{r.scenario.name}: {r.outcome} (expected {want}) -> {'OK' if r.matched else 'MISMATCH'}")
    if a.evidence:
        print(f"evidence: {write_evidence(r, a.evidence)}")
    _dump(a.json, r.to_dict())
    return 0 if r.matched else 1


def cmd_matrix(a) -> int:
    rep = run_matrix(a.directory, a.transport, a.seed, a.evidence)
    print(rep.format())
    for atk, col, got, want in rep.deviations():
        print(f"DEVIATION {atk}/{col}: got {'detected' if got else 'missed'}, "
              f"expected {'detected' if want else 'missed'}")
    _dump(a.json, rep.to_dict())
    return 0 if rep.ok else 1


def cmd_bench(a) -> int:
    rows = bench_rata(tuple(a.sizes))
    print(format_bench(rows))
    _dump(a.json, [r.to_dict() for r in rows])
    return 0


def overhead_rows() -> list:
    rows = []
    for app in APPS:
        plain = build_firmware(app, ARCHS["apex"])
        for mode, arch in (("cfa", "tinycfa"), ("dfa", "dialed")):
            rows.append(measure_overhead(plain, build_firmware(app, ARCHS[arch]),
                                         BENIGN[app], app, mode))
    return rows + aggregate_overhead(rows)


def cmd_report(a) -> int:
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    rep = run_matrix(a.directory, a.transport, a.seed, out / "evidence")
    bench = bench_rata()
    rows = overhead_rows()
    text = "\n\n".join(["Detection matrix\n" + rep.format(), "SW-Att cost\n" + format_bench(bench),
                        "Instrumentation overhead\n" + format_overhead(rows)])
    (out / "report.txt").write_text(text + "\n")
    _dump(str(out / "matrix.json"), rep.to_dict())
    _dump(str(out / "bench.json"), [r.to_dict() for r in bench])
    _dump(str(out / "overhead.json"), [r.to_dict() for r in rows])
    print(text)
    return 0 if rep.ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcuproof", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, evidence=True):
        sp.add_argument("--transport", choices=("mem", "tcp"), default="mem")
        sp.add_argument("--seed", type=int, default=0, help="verifier nonce seed")
        if evidence:
            sp.add_argument("--evidence", metavar="DIR", help="write JSONL evidence logs here")

    s = sub.add_parser("asm", help="assemble a source file into a PMEM image")
    s.add_argument("source")
    s.add_argument("-o", "--output", help="image file to write")
    s.add_argument("--origin", type=lambda v: int(v, 0), default=None)
    s.add_argument("--json")
    s.set_defaults(func=cmd_asm)

    s = sub.add_parser("instrument", help="emit the instrumented ER and its overhead")
    s.add_argument("app", help=f"one of {', '.join(APPS)} or an assembly file")
    s.add_argument("--mode", choices=("cfa", "dfa"), default="cfa")
    s.add_argument("-o", "--output")
    s.add_argument("--json")
    s.set_defaults(func=cmd_instrument)

    s = sub.add_parser("run", help="run one scenario; exit 0 iff the outcome is as expected")
    s.add_argument("scenario")
    common(s)
    s.add_argument("--json")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("matrix", help="run the 5x6 scenario suite")
    s.add_argument("directory", nargs="?", default=None)
    common(s)
    s.add_argument("--json")
    s.set_defaults(func=cmd_matrix)

    s = sub.add_parser("bench", help="full-sweep vs LMT-only SW-Att cycles")
    s.add_argument("--sizes", type=int, nargs="+", default=[1024, 2048, 4096, 8192])
    s.add_argument("--json")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("report", help="matrix, bench and overhead into one directory")
    s.add_argument("--out", default="report")
    s.add_argument("--directory", default=None)
    common(s, evidence=False)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "directory", None) is None and args.command in ("matrix", "report"):
        args.directory = str(shipped_scenarios())
    try:
        return args.func(args)
    except IncompleteMatrix as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ConfigError, AsmError, InstrumentError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except BenchError as e:
        print(f"bench failed: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
