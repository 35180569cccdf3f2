"""Control-flow and data-flow attestation of the threshold app.

1. A benign run: the CF-Log and I-Log the verifier receives, and its verdict.
2. A stack overflow that redirects the return address: CFA rejects the path.
3. A data-only corruption: the path is legal, so CFA accepts a wrong output;
   replaying the I-Log exposes it.

    python demos/cfa_dfa.py
"""

from mcuproof.firmware import ARCHS, boot, build_firmware
from mcuproof.harness import run_scenario, shipped_scenarios
from mcuproof.ief import Mode
from mcuproof.mcu import DEFAULT_KEY
from mcuproof.monitors import MonitorBank
from mcuproof.protocol import Prover, VerifierState, verifier_issue, verify


def benign() -> None:
    fw = build_firmware("threshold", ARCHS["dialed"])
    mcu = boot(fw, MonitorBank.for_arch(ARCHS["dialed"]))
    mcu.feed_input([4, 50, 60, 70, 80, 4])
    vs = VerifierState(DEFAULT_KEY, fw, seed=1)
    resp = Prover(mcu, fw).handle(verifier_issue(vs, Mode.POX))
    view = fw.layout.view(resp.or_bytes)
    print("CF-Log:", " ".join(f"{a:04x}" for a in view.cf_log))
    print("I-Log: ", ", ".join(f"[{a:04x}]={v}" for a, v in view.i_log))
    v = verify(vs, resp, "dfa")
    print("verdict:", v.reason.value, "output words:",
          [int.from_bytes(v.output[i:i + 2], "little") for i in (0, 2)])


def attack(name: str, col: str) -> None:
    r = run_scenario(shipped_scenarios() / f"{name}-{col}.yaml")
    for v in r.verdicts:
        print(f"{name:>12} under {col:<8} {v.reason.value:<20} {v.detail}")


if __name__ == "__main__":
    benign()
    print()
    attack("control_flow", "apex")
    attack("control_flow", "tinycfa")
    attack("data_flow", "tinycfa")
    attack("data_flow", "dialed")
