import shutil

import pytest

from mcuproof.harness import (ATTACKS, COLUMNS, EXPECTED_MATRIX, ConfigError, IncompleteMatrix,
                              bench_rata, load_suite, parse_scenario, run_matrix, run_scenario,
                              shipped_scenarios)
from mcuproof.ief import C_FIXED
from mcuproof.protocol import Reason

SUITE = shipped_scenarios()

GOOD = """schema: 1
name: t
arch: vrased
app: pump
attack: modified_code
expect: {outcome: missed}
inputs: [1, 5, 6]
actions:
  - {cycle: 10, kind: write_mem, addr: 0x3800, words: [1]}
attest:
  - {cycle: 100}
"""


def scenario(attack, col):
    return SUITE / f"{attack}-{col}.yaml"


def test_parse_good_scenario():
    sc = parse_scenario(GOOD)
    assert sc.column == "vrased" and sc.actions[0].line == 9 and sc.attest[0].cycle == 100


@pytest.mark.parametrize("old,new,line", [
    ("kind: write_mem", "kind: teleport", 9),
    ("cycle: 10", "cycle: ten", 9),
    ("arch: vrased", "arch: quantum", 1),
    ("{cycle: 100}", "{cycle: 100, responder: liar}", 11),
    ("inputs: [1, 5, 6]", "inputs: [1, [5], 6]", 1),
])
def test_config_errors_carry_line(old, new, line):
    with pytest.raises(ConfigError) as e:
        parse_scenario(GOOD.replace(old, new), "s.yaml")
    assert e.value.line == line
    assert str(e.value).startswith(f"s.yaml:{line}: ")


def test_yaml_syntax_error_line():
    with pytest.raises(ConfigError) as e:
        parse_scenario(GOOD.replace("inputs: [1, 5, 6]", "inputs: [1, 5, 6"))
    assert e.value.line is not None


def test_missing_and_unknown_fields():
    with pytest.raises(ConfigError, match="missing field 'attest'"):
        parse_scenario(GOOD[:GOOD.index("attest:")])
    with pytest.raises(ConfigError, match="unknown fields"):
        parse_scenario(GOOD + "colour: red\n")
    with pytest.raises(ConfigError, match="schema"):
        parse_scenario(GOOD.replace("schema: 1", "schema: 2"))


def test_incomplete_matrix(tmp_path):
    suite = tmp_path / "suite"
    shutil.copytree(SUITE, suite)
    (suite / "data_flow-apex.yaml").unlink()
    with pytest.raises(IncompleteMatrix) as e:
        run_matrix(suite)
    assert e.value.missing == [("data_flow", "apex")]


def test_duplicate_cell(tmp_path):
    suite = tmp_path / "suite"
    shutil.copytree(SUITE, suite)
    shutil.copy(suite / "toctou-rata.yaml", suite / "zz-copy.yaml")
    with pytest.raises(ConfigError, match="duplicate"):
        load_suite(suite)


def test_shipped_suite_is_complete():
    assert set(load_suite(SUITE)) == {(a, c) for a in ATTACKS for c in COLUMNS}


def test_evidence_is_reproducible():
    a = run_scenario(scenario("toctou", "rata"), seed=5)
    b = run_scenario(scenario("toctou", "rata"), seed=5)
    assert a.evidence_jsonl() == b.evidence_jsonl()
    assert a.to_dict() == b.to_dict()
    assert "time" not in a.evidence_jsonl()


def test_baseline_misses_modified_code():
    r = run_scenario(scenario("modified_code", "baseline"))
    assert not r.detected and r.matched
    assert all(v.reason is Reason.OK for v in r.verdicts)


def test_vrased_catches_modified_code():
    r = run_scenario(scenario("modified_code", "vrased"))
    assert r.detected and r.matched


def test_dialed_column():
    got = {atk: run_scenario(scenario(atk, "dialed")).detected for atk in ATTACKS}
    assert got == {atk: atk != "toctou" for atk in ATTACKS}
    assert [EXPECTED_MATRIX[atk][COLUMNS.index("dialed")] for atk in ATTACKS] == list(got.values())


def test_tcp_transport_same_verdicts():
    mem = run_scenario(scenario("control_flow", "tinycfa"), "mem")
    tcp = run_scenario(scenario("control_flow", "tinycfa"), "tcp")
    assert [v.reason for v in tcp.verdicts] == [v.reason for v in mem.verdicts]


def test_bench_shape():
    rows = {r.pmem_bytes: r for r in bench_rata()}
    assert sorted(rows) == [1024, 2048, 4096, 8192]
    assert len({r.lmt_cycles for r in rows.values()}) == 1
    # affine: the variable part doubles with the size
    assert rows[8192].full_cycles - C_FIXED == 2 * (rows[4096].full_cycles - C_FIXED)
