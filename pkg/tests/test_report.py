import json

import pytest

from popadj import ComparisonResult, DiagnosticError, compare, diagnose, emit_report

OPTS = {"maic": {"n_boot": 30}, "stc": {}, "gcomp_ml": {"n_boot": 30, "N": 300},
        "gcomp_bayes": {"N": 200, "n_draws": 400, "n_burnin": 200},
        "mim": {"N": 200, "M": 4, "n_draws": 400, "n_burnin": 200}}


@pytest.fixture(scope="module")
def results():
    from conftest import binary_dgp
    from popadj import simulate_trial_pair
    pair = simulate_trial_pair(binary_dgp(oracle_n=1000), seed=21)
    return {s: compare(pair.ipd, pair.ald, pair.dgp.model_spec(), s, seed=2, options=o) for s, o in OPTS.items()}


def test_text_layout(results):
    text = emit_report(results["maic"], "text")
    for line in ("ITC algorithm:", "Scale:", "Common treatment:", "Contrasts:", "Absolute:", "ESS:"):
        assert line in text


def test_json_round_trip(results, tmp_path):
    p = tmp_path / "r.json"
    emit_report(results["stc"], "json", p)
    assert ComparisonResult.from_json(p.read_text()) == results["stc"]


def test_csv_rows(results):
    text = emit_report(list(results.values()), "csv")
    assert len(text.strip().splitlines()) == 1 + 5 * 6


def test_svg_glyph_count(results):
    svg = emit_report(list(results.values()), "svg")
    assert svg.count('class="glyph"') == 5 * 6
    for row in ("AB", "AC", "BC"):
        chunk = svg.split(f'data-row="{row}"')[1].split('class="row"')[0]
        assert chunk.count('class="glyph"') == 5


def test_unwritable_path(results, tmp_path):
    from popadj import ValidationError
    with pytest.raises(ValidationError, match="cannot write"):
        emit_report(results["stc"], "text", tmp_path / "missing" / "x.txt")


def test_diagnostics(results):
    d = diagnose(results["maic"])
    assert d["ess"] > 0 and sum(d["histogram"]["counts"]) == d["n"]
    t = diagnose(results["gcomp_bayes"])
    assert set(t["traces"]) == set(results["gcomp_bayes"].extras["posterior_mean"])
    assert 0 < t["acceptance_rate"] < 1
    m = diagnose(results["mim"])
    assert m["nu"] > 0 and m["b_over_ubar"] >= 0
    with pytest.raises(DiagnosticError, match="no weights for STC"):
        diagnose(results["stc"])
    # diagnostics survive a JSON round trip
    back = ComparisonResult.from_json(results["maic"].to_json())
    assert diagnose(back)["ess"] == d["ess"]
