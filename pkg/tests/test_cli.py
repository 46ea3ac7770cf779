import json
import subprocess
import sys

import pytest

from avtdlab import __version__, cli

KASNER_P = [2 / 3, 2 / 3, -1 / 3]


def scenario(tmp_path, name, kind, params, **top):
    cfg = {"schema": cli.SCHEMA, "kind": kind, "name": name, "params": params, **top}
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    return path


def kasner_config(tmp_path, name="kasner"):
    return scenario(tmp_path, name, "cmc-evolve",
                    {"family": "kasner", "family_params": {"p": KASNER_P}})


def test_minimal_kasner_scenario(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", str(kasner_config(tmp_path)), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == [
        "kasner.certificates.json", "kasner.csv", "manifest.json"]
    m = json.loads((out / "manifest.json").read_text())
    assert m["passed"] and all(v["passed"] for v in m["verdicts"].values())
    assert [f["path"] for f in m["files"]] == ["kasner.csv", "kasner.certificates.json"]
    assert m["code_version"] == __version__ and len(m["scenario_hash"]) == 64
    assert str(out / "manifest.json") in capsys.readouterr().out


def test_bessel_scenario_matches_oracle(tmp_path):
    cfg = scenario(tmp_path, "bessel", "gowdy-evolve",
                   {"N": 2, "n_y": 512, "s_end": 1.0, "decay": False,
                    "data": {"type": "bessel", "k": 1}})
    out = tmp_path / "out"
    assert cli.main(["run", str(cfg), "--out", str(out)]) == 0
    certs = json.loads((out / "bessel.certificates.json").read_text())
    assert certs["bessel_oracle"]["metrics"]["max_error"] < 1e-6
    assert (out / "bessel.gowdy").exists()


@pytest.mark.parametrize("params, where", [
    ({"n_y": 128}, "$.params.N"),
    ({"N": 2, "n_y": 128, "colour": 1}, "$.params.colour"),
    ({"N": 2, "n_y": 127}, "$.params.n_y"),
    ({"N": 3, "data": {"type": "bessel"}}, "$.params.N"),
    ({"N": 2, "s_end": -1.0}, "$.params.s_end"),
])
def test_malformed_config_rejected_before_compute(tmp_path, capsys, params, where):
    cfg = scenario(tmp_path, "bad", "gowdy-evolve", params)
    out = tmp_path / "never"
    assert cli.main(["run", str(cfg), "--out", str(out)]) == 2
    assert where in capsys.readouterr().err
    assert not out.exists()


def test_unknown_top_level_key_and_schema(tmp_path):
    with pytest.raises(cli.ConfigError, match=r"\$\.extra"):
        cli.validate({"schema": cli.SCHEMA, "kind": "cmc-causal", "extra": 1})
    with pytest.raises(cli.ConfigError, match=r"\$\.schema"):
        cli.validate({"schema": "other", "kind": "cmc-causal"})
    with pytest.raises(cli.ConfigError, match="tolerances"):
        cli.validate({"schema": cli.SCHEMA, "kind": "cmc-evolve",
                      "params": {"family": "cone"}, "tolerances": {"bogus": 1.0}})
    bad_json = tmp_path / "x.json"
    bad_json.write_text("{not json")
    assert cli.main(["run", str(bad_json)]) == 2


def test_rerun_is_byte_identical(tmp_path):
    cfg = scenario(tmp_path, "rnd", "gowdy-evolve",
                   {"N": 3, "n_y": 64, "s_end": 1.0, "decay": False}, seed=11)
    for d in ("a", "b"):
        assert cli.main(["run", str(cfg), "--out", str(tmp_path / d)]) in (0, 1)
    for f in ("rnd.csv", "rnd.gowdy", "rnd.certificates.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_report_two_rows_then_tamper(tmp_path, capsys):
    m1 = tmp_path / "k1"
    m2 = tmp_path / "k2"
    cli.main(["run", str(kasner_config(tmp_path, "k1")), "--out", str(m1)])
    cfg = scenario(tmp_path, "cau", "cmc-causal",
                   {"family": "kasner", "family_params": {"p": KASNER_P}, "block": 2})
    cli.main(["run", str(cfg), "--out", str(m2)])
    capsys.readouterr()
    table = tmp_path / "table.csv"
    assert cli.main(["report", str(m1 / "manifest.json"), str(m2 / "manifest.json"),
                     "--csv", str(table)]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert len(printed) == 3 and printed[0].split() == cli.REPORT_COLUMNS
    rows = table.read_text().splitlines()
    assert rows[0] == ",".join(cli.REPORT_COLUMNS) and len(rows) == 3
    with open(m1 / "k1.csv", "a") as fh:
        fh.write("0,0\n")
    assert cli.main(["report", str(m1 / "manifest.json"), str(m2 / "manifest.json")]) == 1
    assert "DIGEST MISMATCH" in capsys.readouterr().out


def test_report_usage_errors(tmp_path, capsys):
    assert cli.main(["report"]) == 2
    junk = tmp_path / "junk.json"
    junk.write_text("{}")
    assert cli.main(["report", str(junk)]) == 2


def test_tsym_expansion_scenario(tmp_path):
    cfg = scenario(tmp_path, "ts", "tsym-analyze",
                   {"expansion": {"k": {"mean": 0.7, "cos": [0.02]}, "A_star": 0.3,
                                  "A_ss": {"sin": [1.0]}}})
    out = tmp_path / "out"
    assert cli.main(["run", str(cfg), "--out", str(out)]) == 0
    m = json.loads((out / "manifest.json").read_text())
    assert m["verdicts"]["implication"]["judged"]
    assert {"ts.tsym", "ts.csv", "ts.certificates.json"} <= {f["path"] for f in m["files"]}


def test_outputs_stay_inside_directory(tmp_path):
    out = cli.Outputs(tmp_path)
    with pytest.raises(ValueError):
        out.write_json("../escape.json", {})


def test_version_and_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "avtdlab", "--version"], capture_output=True,
                         text=True, check=True)
    assert res.stdout.strip() == f"avtdlab {__version__}"
    res = subprocess.run([sys.executable, "-m", "avtdlab"], capture_output=True, text=True)
    assert res.returncode == 2
