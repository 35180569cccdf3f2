"""Transient malware against plain attestation and against LMT logging.

Runs the shipped TOCTOU scenario under the VRASED-only and the RATA column
and prints each verifier verdict plus the adversary's scripted actions.

    python demos/toctou.py
"""

from mcuproof.harness import run_scenario, shipped_scenarios


def show(col: str) -> None:
    r = run_scenario(shipped_scenarios() / f"toctou-{col}.yaml")
    print(f"== {col}")
    for e in r.evidence:
        if e.get("event") == "action":
            print(f"  cycle {e['cycle']:>6}: {e['kind']}")
    for v in r.verdicts:
        print(f"  verdict: {v.reason.value} {v.detail}")
    print(f"  -> {r.outcome}")


if __name__ == "__main__":
    show("vrased")
    show("rata")
