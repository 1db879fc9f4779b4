import json
import subprocess
import sys
from pathlib import Path

import pytest

from concatmc.cli import main, run
from concatmc.config import load_config, parse_config
from concatmc.errors import ConfigurationError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def cfg(name):
    return str(CONFIGS / name)


def write(tmp_path, doc, name="c.json"):
    p = tmp_path / name
    p.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return str(p)


def base_doc():
    return json.loads((CONFIGS / "exponential.json").read_text())


def read_rows(path):
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    head = lines[0].split(",")
    return [dict(zip(head, ln.split(","))) for ln in lines[1:]]


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.json")))
def test_shipped_configs_parse(name):
    c = load_config(cfg(name))
    assert isinstance(c.seed, int)


def test_seed_is_mandatory(tmp_path):
    doc = base_doc()
    del doc["seed"]
    with pytest.raises(ConfigurationError, match="seed"):
        load_config(write(tmp_path, doc))


def test_field_path_in_diagnostics(tmp_path):
    doc = base_doc()
    doc["processes"]["p"]["kill"] = {"x": -1.0}
    with pytest.raises(ConfigurationError, match="processes.p"):
        load_config(write(tmp_path, doc))
    doc = base_doc()
    doc["plan"]["stages"][0]["process"] = "missing"
    with pytest.raises(ConfigurationError, match=r"plan.stages\[0\].process"):
        load_config(write(tmp_path, doc))
    doc = base_doc()
    doc["params"]["alpha"] = "one"
    with pytest.raises(ConfigurationError, match="params.alpha"):
        load_config(write(tmp_path, doc))


def test_json_syntax_error_has_position(tmp_path):
    with pytest.raises(ConfigurationError, match="line 2, column"):
        load_config(write(tmp_path, '{"seed": 1,\n  "plan": }'))


def test_unknown_top_level_field():
    doc = base_doc()
    doc["colour"] = "blue"
    with pytest.raises(ConfigurationError, match="colour"):
        parse_config(doc)


def test_overrides_apply_and_are_recorded():
    c = load_config(cfg("exponential.json"), {"seed": 7, "samples": 50, "max_revivals": 0, "horizon": 3.0})
    assert c.seed == 7 and c.param("samples") == 50 and c.plan.horizon == 3.0
    assert json.loads(c.resolved_json())["plan"]["horizon"] == 3.0
    p = load_config(cfg("violating_pair.json"), {"max_revivals": 4})
    assert p.plan.max_revivals == 4


def test_resolvent_cli_pass(tmp_path):
    assert main(["resolvent", cfg("exponential.json"), "--samples", "5000", "--out-dir", str(tmp_path), "--quiet"]) == 0
    rows = read_rows(tmp_path / "resolvent.csv")
    assert rows[0]["pass"] == "true" and rows[0]["seed"] == "1001"


def test_csv_header_comments(tmp_path):
    main(["semigroup", cfg("exponential.json"), "--samples", "500", "--out-dir", str(tmp_path), "--quiet"])
    text = (tmp_path / "semigroup.csv").read_text().splitlines()
    assert text[0].startswith("# concatmc ")
    assert "# seed: 1001" in text
    config_line = next(ln for ln in text if ln.startswith("# config: "))
    assert json.loads(config_line[len("# config: ") :])["params"]["samples"] == 500


def test_check_pasting_exit_codes(tmp_path):
    assert main(["check-pasting", cfg("identical_iterations.json"), "--out-dir", str(tmp_path), "--quiet"]) == 0
    report = json.loads((tmp_path / "check-pasting.json").read_text())
    assert report["route"] == "identical iterations"
    assert main(["check-pasting", cfg("violating_pair.json"), "--out-dir", str(tmp_path), "--quiet"]) == 1


def test_config_error_exit_code(tmp_path, capsys):
    doc = base_doc()
    del doc["seed"]
    assert main(["resolvent", write(tmp_path, doc), "--out-dir", str(tmp_path), "--quiet"]) == 2
    assert "seed" in capsys.readouterr().err
    assert main(["resolvent", str(tmp_path / "nope.json"), "--quiet"]) == 2


def test_single_sample_is_config_error(tmp_path):
    assert main(["resolvent", cfg("exponential.json"), "--samples", "1", "--out-dir", str(tmp_path), "--quiet"]) == 2


def test_command_needing_plan(tmp_path):
    assert run("resolvent", cfg("laplace_exponential.json"), out_dir=str(tmp_path)) == 2


def test_determinism_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["resolvent", cfg("four_state.json"), "--samples", "2000", "--out-dir", str(d), "--quiet"]) == 0
    assert (a / "resolvent.csv").read_bytes() == (b / "resolvent.csv").read_bytes()
    c = tmp_path / "c"
    main(["resolvent", cfg("four_state.json"), "--samples", "2000", "--seed", "5", "--out-dir", str(c), "--quiet"])
    assert (c / "resolvent.csv").read_bytes() != (a / "resolvent.csv").read_bytes()


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("CONCATMC_OUT_DIR", str(tmp_path / "env"))
    assert main(["semigroup", cfg("exponential.json"), "--samples", "100", "--quiet"]) == 0
    assert (tmp_path / "env" / "semigroup.csv").exists()


def test_simulate_outputs(tmp_path):
    assert main(["simulate", cfg("two_stage.json"), "--samples", "500", "--out-dir", str(tmp_path), "--quiet"]) == 0
    labels = [r["label"] for r in read_rows(tmp_path / "simulate.csv")]
    assert labels == ["lifetime", "truncation_hit_rate"]
    paths = (tmp_path / "simulate_paths.csv").read_text().splitlines()
    assert paths[0] == "path_id,time,tag,state"


def test_truncation_hit_rate(tmp_path):
    main(["simulate", cfg("two_stage.json"), "--samples", "200", "--max-revivals", "0", "--out-dir", str(tmp_path), "--quiet"])
    rows = {r["label"]: r for r in read_rows(tmp_path / "simulate.csv")}
    assert float(rows["truncation_hit_rate"]["estimate"]) == 1.0


def test_invert_laplace(tmp_path):
    assert main(["invert-laplace", cfg("laplace_exponential.json"), "--out-dir", str(tmp_path), "--quiet"]) == 0
    labels = [r["label"] for r in read_rows(tmp_path / "invert-laplace.csv")]
    assert any("error_decreases" in lab for lab in labels)


def test_check_revival_and_dynkin(tmp_path):
    assert main(["check-revival", cfg("four_state.json"), "--samples", "4000", "--out-dir", str(tmp_path), "--quiet"]) == 0
    assert main(["check-dynkin", cfg("four_state.json"), "--samples", "2000", "--out-dir", str(tmp_path), "--quiet"]) == 0


def test_module_entry_point(tmp_path):
    out = subprocess.run(
        [sys.executable, "-m", "concatmc", "resolvent", cfg("exponential.json"), "--samples", "200", "--out-dir", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert out.returncode == 0 and "command,label,estimate" in out.stdout
