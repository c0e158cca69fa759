import json
import math

import numpy as np
import pytest

from tmsv_bell import cli

CHSH_HEADER = "zeta,cutoff,tail_mass,S_canonical,S_optimized,normalizer,mean_polarization_A,mean_polarization_B"


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def parse_csv(text):
    lines = [ln for ln in text.split("\n") if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    return header, [dict(zip(header, ln.split(","))) for ln in lines[1:]]


# --- formatting ----------------------------------------------------------------


@pytest.mark.parametrize(
    "value, text",
    [
        (0.0, "0"),
        (1.0, "1"),
        (2.8284271247461903, "2.82842712475"),
        (6.577058209004122, "6.577058209"),
        (123456789012345.0, "123456789012000"),
        (1e-12, "0.000000000001"),
        (-0.5, "-0.5"),
        (7, "7"),
        (True, "true"),
        ("degenerate", "degenerate"),
    ],
)
def test_fmt(value, text):
    assert cli.fmt(value) == text


def test_fmt_has_no_exponent():
    for x in (1e-30, 3.5e20, -2.2e-7):
        assert "e" not in cli.fmt(x)


# --- sweep-chsh -------------------------------------------------------------------


def test_sweep_chsh_rows(capsys):
    code, out, _ = run(capsys, "sweep-chsh", "--zeta", "0.2", "--zeta", "1.0", "--zeta", "2.0")
    assert code == 0
    assert out.split("\n")[0] == CHSH_HEADER
    assert "\r" not in out
    header, rows = parse_csv(out)
    assert [float(r["zeta"]) for r in rows] == [0.2, 1.0, 2.0]
    for r in rows:
        assert abs(float(r["S_canonical"]) - 2.828427) <= 1e-6
        assert abs(float(r["S_optimized"]) - 2 * math.sqrt(2)) <= 1e-6
        assert abs(float(r["mean_polarization_A"])) <= 1e-9
        assert abs(float(r["mean_polarization_B"])) <= 1e-9


def test_sweep_chsh_degenerate_row(capsys):
    code, out, _ = run(capsys, "sweep-chsh", "--zeta", "0")
    assert code == 0
    _, rows = parse_csv(out)
    assert rows[0]["S_canonical"] == "degenerate"
    assert rows[0]["S_optimized"] == "degenerate"
    assert rows[0]["cutoff"] == "2"


def test_sweep_chsh_json(capsys):
    code, out, _ = run(capsys, "sweep-chsh", "--zeta", "0", "--zeta", "0.5", "--format", "json")
    assert code == 0
    doc = json.loads(out)
    assert set(doc) == {"config", "rows"}
    assert doc["config"]["zeta_values"] == [0.0, 0.5]
    assert doc["config"]["tail_tolerance"] == 1e-10
    assert [list(r) for r in doc["rows"]] == [CHSH_HEADER.split(",")] * 2
    assert doc["rows"][0]["S_canonical"] == "degenerate"
    assert doc["rows"][1]["S_canonical"] == pytest.approx(2 * math.sqrt(2), abs=1e-10)


def test_sweep_chsh_byte_determinism(tmp_path):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        assert cli.main(["sweep-chsh", "--zeta", "0.3", "--zeta", "1.2", "--seed", "4", "--out", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_unwritable_path(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["sweep-chsh", "--zeta", "0.5", "--out", str(tmp_path / "missing" / "x.csv")])
    assert exc.value.code != 0


def test_invalid_zeta_rejected(capsys):
    code, _, err = run(capsys, "sweep-chsh", "--zeta", "-1")
    assert code == 2
    assert "zeta" in err


def test_invalid_tail_tolerance_rejected(capsys):
    code, _, _ = run(capsys, "sweep-parity", "--zeta", "1", "--tail-tol", "2")
    assert code == 2


def test_missing_zeta_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main(["sweep-chsh"])
    assert exc.value.code == 2


# --- sweep-parity ----------------------------------------------------------------


def test_sweep_parity(capsys):
    code, out, _ = run(capsys, "sweep-parity", *[f"--zeta={z}" for z in (0, 0.5, 1, 2, 3)])
    assert code == 0
    header, rows = parse_csv(out)
    assert header == ["zeta", "parity_numeric", "parity_closed_form", "abs_error"]
    assert rows[0]["parity_numeric"] == "1"
    assert abs(float(rows[2]["parity_numeric"]) - 0.26580) <= 1e-5
    assert float(rows[2]["abs_error"]) <= 1e-9
    vals = [float(r["parity_numeric"]) for r in rows]
    assert np.all(np.diff(vals) < 0)


def test_sweep_parity_unwritable(tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["sweep-parity", "--zeta", "1", "--out", str(tmp_path)])


# --- wigner-grid ----------------------------------------------------------------


def test_wigner_grid_csv(tmp_path):
    out = tmp_path / "w.csv"
    assert cli.main(["wigner-grid", "--zeta", "0.3", "--out", str(out)]) == 0
    text = out.read_text()
    lines = text.rstrip("\n").split("\n")
    assert lines[0] == "q_A,p_A,q_B,p_B,W"
    assert len(lines) == 1 + 17**4 + 1
    assert any(ln.startswith("0,0,0,0,0.405284734569") for ln in lines)
    summary = dict(kv.split("=") for kv in lines[-1][2:].split(","))
    assert abs(float(summary["normalization"]) - 1) <= 1e-4
    assert summary["grid_too_narrow"] == "false"
    w = np.array([float(ln.rsplit(",", 1)[1]) for ln in lines[1:-1]])
    assert w.min() >= 0


def test_wigner_grid_json_summary(capsys):
    code, out, _ = run(capsys, "wigner-grid", "--zeta", "0", "--grid-points", "9", "--format", "json")
    assert code == 0
    doc = json.loads(out)
    assert set(doc) == {"config", "rows", "summary"}
    assert len(doc["rows"]) == 9**4
    assert doc["summary"]["grid_too_narrow"] is False
    origin = [r for r in doc["rows"] if (r["q_A"], r["p_A"], r["q_B"], r["p_B"]) == (0, 0, 0, 0)]
    assert origin[0]["W"] == pytest.approx(4 / math.pi**2, abs=1e-12)


def test_wigner_grid_narrow_flag(capsys):
    code, out, _ = run(capsys, "wigner-grid", "--zeta", "1", "--grid-half-width", "1", "--grid-points", "9")
    assert code == 0
    assert "grid_too_narrow=true" in out.rstrip("\n").split("\n")[-1]


def test_wigner_grid_single_zeta_only(capsys):
    code, _, _ = run(capsys, "wigner-grid", "--zeta", "0.1", "--zeta", "0.2")
    assert code == 2


def test_wigner_grid_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        cli.main(["wigner-grid", "--zeta", "0.7", "--grid-points", "8", "--format", "json", "--out", str(p)])
    assert a.read_bytes() == b.read_bytes()


# --- verify ------------------------------------------------------------------------


def test_verify_default_passes(capsys):
    code, out, _ = run(capsys, "verify")
    assert code == 0
    assert "FAIL" not in out
    assert out.rstrip().endswith("checks passed")


def test_verify_mutant_fails(capsys):
    code, out, _ = run(capsys, "verify", "--inject-kx-sign-flip")
    assert code != 0
    failed = [ln for ln in out.split("\n") if ln.startswith("FAIL")]
    assert any("[K0, K_x]" in ln for ln in failed)
    assert any("E-law" in ln for ln in failed)


def test_verify_loose_tolerance_passes(capsys):
    code, out, _ = run(capsys, "verify", "--tail-tol", "1e-6")
    assert code == 0
    assert "FAIL" not in out
