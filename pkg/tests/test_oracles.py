import time

import pytest

from bmdrkit import oracles
from bmdrkit.errors import OracleFailure


def test_every_derived_claim_has_an_oracle():
    assert oracles.missing_claims() == []


def test_ml_filter_selects_enumeration_oracles():
    selected = {o.name for o in oracles._select("ml")}
    assert selected == {n for n, o in oracles.REGISTRY.items() if "ml" in o.kinds}
    assert {"ml_bruteforce", "kbest_full_width"} <= selected
    assert "gf2_rank" not in selected


def test_rerun_reproduces_references(tmp_path):
    first = oracles.run_oracles("numerics", seed=3, reference_dir=tmp_path)
    second = oracles.run_oracles("numerics", seed=3, reference_dir=tmp_path)
    assert all(r.passed and not r.drift for r in first + second)
    assert [r.measured for r in first] == [r.measured for r in second]


def test_input_drift_detected(tmp_path):
    oracles.run_oracles("embed_product", seed=1, reference_dir=tmp_path)
    again = oracles.run_oracles("embed_product", seed=2, reference_dir=tmp_path)
    assert again[0].drift == "inputs changed" and not again[0].passed


def test_failure_raises_with_diff(monkeypatch):
    def broken(seed):
        return oracles.Outcome(1.0, 2.0, 0.0, False, {"seed": seed})

    monkeypatch.setitem(oracles.REGISTRY, "broken", oracles._Oracle("broken", ("broken",), (), broken))
    with pytest.raises(OracleFailure, match="reference"):
        oracles.run_oracles("broken", raise_on_fail=True)


def test_report_csv_and_summary(tmp_path):
    reps = oracles.run_oracles("modem")
    oracles.write_report_csv(reps, tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().startswith("oracle,inputs_hash")
    assert "oracles passed" in oracles.summary(reps)


ELAPSED = {}
MEASURED = sorted(n for n, o in oracles.REGISTRY.items() if "meta" not in o.kinds)


@pytest.mark.parametrize("name", MEASURED)
def test_oracle(name):
    t0 = time.perf_counter()
    out = oracles.REGISTRY[name].fn(0)
    ELAPSED[name] = time.perf_counter() - t0
    assert out.passed, f"{name}: reference {out.reference} measured {out.measured} {out.detail}"


def test_suite_budget():
    """Sum of the individual oracle run times above (the meta oracle reruns them all)."""
    if len(ELAPSED) < len(MEASURED):
        pytest.skip("needs the full oracle run in this session")
    assert sum(ELAPSED.values()) < oracles.SUITE_BUDGET_S
