import csv
import io
import json
import math

import pytest

from l2cutoff import cli, families, product

TWO_STATE = """\
kind: continuous
states: 2
matrix:
-0.2 0.2
0.8 -0.8
initial: 1 0
"""


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def sections(text):
    """csv output -> {section: [row dicts]}"""
    out, name, buf = {}, None, []
    for line in text.splitlines() + [""]:
        if line.startswith("# "):
            if name:
                out[name] = list(csv.DictReader(io.StringIO("\n".join(buf))))
            name, buf = line[2:], []
        elif line:
            buf.append(line)
    if name:
        out[name] = list(csv.DictReader(io.StringIO("\n".join(buf))))
    return out


@pytest.fixture
def chain_file(tmp_path):
    p = tmp_path / "two.chain"
    p.write_text(TWO_STATE)
    return p


def test_analyze_two_state_closed_forms(capsys, chain_file):
    code, out, _ = run(capsys, "analyze", chain_file, "--c", 0.1, "--eps", 0.1, 0.3, "--format", "csv")
    assert code == 0
    sec = sections(out)
    (cut,) = sec["cutoff"]
    # one rate A + B = 1 with weight A / B = 0.25
    assert float(cut["tau"]) == pytest.approx(math.log(1.25) / 2, rel=1e-11)
    assert float(cut["lambda_jc"]) == pytest.approx(1.0, rel=1e-11)
    mix = {float(r["eps"]): float(r["T2"]) for r in sec["mixing"]}
    assert mix[0.1] == pytest.approx(math.log(0.25 / 0.01) / 2, rel=1e-11)
    assert mix[0.3] == pytest.approx(math.log(0.25 / 0.09) / 2, rel=1e-11)
    assert float(sec["chain"][0]["mass"]) == pytest.approx(0.25, rel=1e-11)


def test_analyze_twelve_digits(capsys, chain_file):
    _, out, _ = run(capsys, "analyze", chain_file, "--c", 0.1, "--eps", 0.1)
    assert f"{math.log(1.25) / 2:.12g}" in out


def test_analyze_stationary_start(capsys, chain_file):
    code, out, _ = run(capsys, "analyze", chain_file, "--initial", "0.8 0.2", "--format", "csv")
    assert code == 0
    assert "already mixed" in out
    sec = sections(out)
    assert all(r["T2"] == "0" for r in sec["mixing"])
    assert "cutoff" not in sec


def test_analyze_malformed_matrix(capsys, tmp_path):
    p = tmp_path / "bad.chain"
    p.write_text(TWO_STATE.replace("0.8 -0.8", "0.8 x"))
    code, _, err = run(capsys, "analyze", p)
    assert code == 2
    assert "bad.chain" in err and ":5" in err


def test_analyze_invalid_chain(capsys, tmp_path):
    p = tmp_path / "nonrev.chain"
    p.write_text("kind: discrete\nstates: 3\nmatrix:\n0 1 0\n0 0 1\n1 0 0\ninitial: 1 0 0\n")
    assert run(capsys, "analyze", p)[0] == 2


def test_usage_errors(capsys, chain_file):
    assert run(capsys, "analyze")[0] == 1
    assert run(capsys, "bogus")[0] == 1
    assert run(capsys, "analyze", chain_file, "--eps", -1)[0] == 1
    assert run(capsys, "analyze", chain_file, "--initial", "delta 7")[0] == 1
    assert run(capsys, "analyze", chain_file, "--format", "xml")[0] == 1


def test_missing_file(capsys, tmp_path):
    assert run(capsys, "analyze", tmp_path / "none.chain")[0] == 2


def test_export_round_trip(capsys, chain_file, tmp_path):
    _, first, _ = run(capsys, "analyze", chain_file)
    out = tmp_path / "again.chain"
    assert run(capsys, "export", chain_file, "--out", out)[0] == 0
    _, second, _ = run(capsys, "analyze", out)
    assert first == second
    again = tmp_path / "third.chain"
    run(capsys, "export", out, "--out", again)
    assert out.read_text() == again.read_text()


def test_export_product_round_trip(capsys, tmp_path):
    spec = families.machinery_build(6, families.Profile("explog", 1, 1), 2, 5, 0.3, 0.6)[0]
    p = tmp_path / "m.prod"
    p.write_text(product.format_product(spec))
    _, first, _ = run(capsys, "product", p, "--c", 0.5, "--eps", 0.5)
    q = tmp_path / "m2.prod"
    assert run(capsys, "export", p, "--out", q)[0] == 0
    _, second, _ = run(capsys, "product", q, "--c", 0.5, "--eps", 0.5)
    assert first == second


def test_export_measure(capsys, chain_file, tmp_path):
    m = tmp_path / "two.measure"
    assert run(capsys, "export", chain_file, "--as", "measure", "--out", m)[0] == 0
    from l2cutoff import laplace
    V = laplace.read_measure(m)
    assert V.rates.tolist() == pytest.approx([2.0])
    assert V.masses.tolist() == pytest.approx([0.25])
    _, out, _ = run(capsys, "export", m)
    assert out == m.read_text()


def test_json_format(capsys, chain_file):
    _, out, _ = run(capsys, "analyze", chain_file, "--format", "json", "--c", 0.1, 1.0)
    doc = json.loads(out)
    assert doc["cutoff"][0]["admissible"] is True
    assert doc["cutoff"][1]["admissible"] is False
    assert doc["cutoff"][1]["tau"] is None


def test_product_command(capsys, tmp_path):
    spec = product.ProductSpec([families.two_state_spectral(0.5, 0.5)] * 2, [0.4, 0.6])
    p = tmp_path / "h.prod"
    p.write_text(product.format_product(spec))
    code, out, _ = run(capsys, "product", p, "--bracket", "--c", 0.5, "--eps", 0.3,
                       "--format", "csv")
    assert code == 0
    sec = sections(out)
    (row,) = sec["cutoff"]
    assert float(row["varrho_jc"]) == pytest.approx(0.4)
    assert float(row["rho"]) == pytest.approx(0.4)
    assert float(row["varrho_jexp"]) == pytest.approx(0.4)
    assert row["bracket_ok"] == "true"
    (mix,) = sec["mixing"]
    assert float(mix["T2_lower_arg"]) <= float(mix["script_T"]) <= float(mix["T2"])


def test_scenario_counterexample(capsys):
    code, out, _ = run(capsys, "scenario", "counterexample", "--n", 100000, "--A", 0.25)
    assert code == 0
    assert f"{2 * (math.sqrt(2) - math.exp(-0.5)):.12g}" in out
    _, out, _ = run(capsys, "scenario", "counterexample", "--format", "csv")
    rows = sections(out)["counterexample"]
    assert [float(r["A"]) for r in rows] == [0.25, 0.5, 1.0]
    assert all(float(r["rel_err"]) < 0.03 for r in rows)
    assert float(rows[0]["limit"]) == pytest.approx(1.61537, abs=1e-5)
    assert float(rows[0]["D_n"]) == pytest.approx(1.61537, rel=0.03)


def test_scenario_machinery(capsys):
    code, out, _ = run(capsys, "scenario", "machinery", "--case", 2, "--a", 1, "--b", 1,
                       "--alpha", 0.5, "--n", 100, 1000, "--format", "csv")
    assert code == 0
    rows = sections(out)["machinery"]
    assert [int(r["n"]) for r in rows] == [100, 1000]
    for r in rows:
        assert {"tau_tilde_scaled", "kappa_n", "predicted", "ratio", "leading"} <= set(r)
        assert float(r["ratio"]) == pytest.approx(float(r["tau_tilde_scaled"]) / float(r["predicted"]))
    _, out, _ = run(capsys, "scenario", "machinery", "--case", 1, "--n", 50, "--format", "csv")
    (row,) = sections(out)["machinery"]
    assert float(row["delta_n"]) == pytest.approx(math.log(2), rel=1e-12)
    assert "kappa_n" not in row


def test_scenario_comparison(capsys):
    code, out, _ = run(capsys, "scenario", "comparison", "--format", "csv")
    assert code == 0
    rows = sections(out)["comparison"]
    assert len(rows) == 27
    for r in rows:
        assert float(r["ratio"]) == pytest.approx(float(r["closed_form"]), rel=1e-9)
        assert r["in_window"] == "true" and r["eig_checks"] == "true"


def test_scenario_two_state(capsys):
    code, out, _ = run(capsys, "scenario", "two-state", "--format", "csv")
    assert code == 0
    rows = sections(out)["two_state"]
    assert rows and all(float(r["abs_err"]) <= 1e-9 for r in rows)


def test_family_command(capsys, tmp_path):
    cfg = tmp_path / "cg.family"
    cfg.write_text("family: complete-graph\nr: 0.5\nn: 4 16 64\nc: 0.5\neps: 0.1 0.5\n")
    code, out, _ = run(capsys, "family", cfg, "--format", "csv")
    assert code == 0
    sec = sections(out)
    assert len(sec["sweep"]) == 6
    assert list(sec["sweep"][0]) == cli.diagnostics.COLUMNS
    ratios = [float(r["ratio"]) for r in sec["precutoff"]]
    assert ratios == sorted(ratios, reverse=True)
    _, par, _ = run(capsys, "family", cfg, "--format", "csv", "--jobs", 3)
    assert par == out


def test_family_config_errors(capsys, tmp_path):
    cfg = tmp_path / "bad.family"
    cfg.write_text("family: nothing\nn: 4\n")
    assert run(capsys, "family", cfg)[0] == 2
    cfg.write_text("family: counterexample\n")
    assert run(capsys, "family", cfg)[0] == 1
    cfg.write_text("no colon here\n")
    assert run(capsys, "family", cfg)[0] == 2


def test_family_machinery_config(capsys, tmp_path):
    cfg = tmp_path / "m.family"
    cfg.write_text("family: machinery\ncase: 3\na: 0.5\nalpha: 0.5\nn: 100 400\n")
    code, out, _ = run(capsys, "family", cfg, "--c", 0.25, "--eps", 0.5, "--format", "json")
    assert code == 0
    doc = json.loads(out)
    assert [r["n"] for r in doc["sweep"]] == [100, 400]


def test_verify_exit_codes(capsys):
    code, out, _ = run(capsys, "verify", "--seed", 42, "--scale", 0.1)
    assert code == 0
    assert "all suites pass" in out
    code, out, _ = run(capsys, "verify", "--seed", 42, "--scale", 0.1, "--tol", 1e-15)
    assert code == 3
    assert "FAIL" in out


def test_out_file(capsys, chain_file, tmp_path):
    target = tmp_path / "report.csv"
    code, out, _ = run(capsys, "analyze", chain_file, "--format", "csv", "--out", target)
    assert code == 0 and out == ""
    assert "# cutoff" in target.read_text()
