import json
import subprocess
import sys

import pytest

from ltpe import cli, report
from ltpe.model import builtin_ginzburg_landau, make_model
from ltpe.scheme import max_stable_stepsize


def test_parse_number_powers_of_two():
    assert cli.parse_number("2^-6") == 2.0**-6
    assert cli.parse_number("2 ^ 3") == 8.0
    assert cli.parse_list("2^-4,0.5") == [0.0625, 0.5]
    with pytest.raises(ValueError):
        cli.parse_number("2^x")


def test_empty_config_names_required_fields():
    with pytest.raises(cli.ConfigError) as info:
        cli.validate({})
    text = " ".join(info.value.errors)
    assert "command" in text and "model" in text


def test_errors_are_collected():
    with pytest.raises(cli.ConfigError) as info:
        cli.validate({"command": "simulate", "model": "ginzburg_landau", "theta": 1.5, "M": 0,
                      "T": -1})
    keys = {e.split(":")[0] for e in info.value.errors}
    assert {"theta", "M", "T"} <= keys


def test_inadmissible_step_names_binding_bound():
    m = builtin_ginzburg_landau()
    with pytest.raises(cli.ConfigError) as info:
        cli.validate({"command": "simulate", "model": "ginzburg_landau", "theta": 0.0,
                      "h": 0.0625, "T": 1.0})
    assert len(info.value.errors) == 1
    msg = info.value.errors[0]
    assert "contractivity_drift" in msg
    assert f"{max_stable_stepsize(m, 0.0):.6g}" in msg


def test_force_h_turns_error_into_warning():
    cfg = cli.validate({"command": "simulate", "model": "ginzburg_landau", "theta": 0.0,
                        "h": 0.0625, "T": 1.0, "force_h": True})
    assert any(w.startswith("forced") for w in cfg["warnings"])


def test_happy_path_echoes_defaults():
    cfg = cli.validate({"command": "weak-error", "model": "ginzburg_landau", "theta": "0",
                        "seed": "42"})
    assert cfg["h"] == [2.0**-6, 2.0**-7, 2.0**-8, 2.0**-9]
    assert cfg["h_ref"] == 2.0**-12 and cfg["T"] == 5.0 and cfg["M"] == 10000
    assert cfg["phi"] == "atan_norm,gauss,cos_norm,sin_norm_sq"
    assert cfg["theta_ref"] == 0.0 and cfg["seed"] == 42
    assert cfg["model_params"] == {}


def test_horizon_must_be_multiple_of_step():
    with pytest.raises(cli.ConfigError, match="integer"):
        cli.validate({"command": "simulate", "model": "mean_reverting", "h": 0.03, "T": 1.0})


def test_moments_default_step_is_half_h_max():
    cfg = cli.validate({"command": "moments", "model": "mean_reverting", "theta": 0.5})
    h_max = max_stable_stepsize(make_model("mean_reverting"), 0.5)
    assert cfg["h"] <= h_max / 2
    assert cfg["T"] / cfg["h"] == pytest.approx(round(cfg["T"] / cfg["h"]))


def test_check_command(capsys):
    assert cli.main(["check", "--model", "ginzburg_landau", "--theta", "1"]) == 0
    out = capsys.readouterr().out
    assert "gaps" in out and "h_max" in out and "L1=" in out


def test_model_params_flag(capsys, tmp_path):
    out = tmp_path / "c.csv"
    assert cli.main(["check", "--model", "allen_cahn", "--param", "K=8", "--out", str(out)]) == 0
    assert report.read_header(out)["model_params"] == {"K": 8}
    assert cli.main(["check", "--model", "allen_cahn", "--param", "K8"]) == 1


def test_config_file_and_override(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"model": "mean_reverting", "T": 1, "M": 5, "h": "2^-4",
                                "seed": 3}))
    out = tmp_path / "s.csv"
    assert cli.main(["simulate", "--config", str(conf), "--M", "7", "--out", str(out)]) == 0
    header = report.read_header(out)
    assert header["M"] == 7 and header["seed"] == 3 and header["h"] == 0.0625
    lines = out.read_text().splitlines()
    assert lines[1] == ",".join(report.SAMPLE_COLUMNS)
    assert len(lines) == 2 + 7


def test_bad_config_file(tmp_path):
    assert cli.main(["check", "--config", str(tmp_path / "missing.json")]) == 1


def test_weak_error_csv_and_svg(tmp_path, capsys):
    out, svg = tmp_path / "w.csv", tmp_path / "w.svg"
    code = cli.main(["weak-error", "--model", "mean_reverting", "--theta", "0.5",
                     "--theta-ref", "1", "--h", "2^-4,2^-5,2^-6", "--h-ref", "2^-8", "--T", "2",
                     "--M", "400", "--seed", "1", "--out", str(out), "--svg", str(svg)])
    assert code in (0, 2)
    rows = out.read_text().splitlines()[2:]
    assert len(rows) == 12
    assert svg.read_text().startswith("<svg")
    assert "slope" in capsys.readouterr().err


def test_weak_error_verdict_failure_exit(tmp_path):
    # the finest level equals the reference, so its error is 0 and no rate can be fitted
    code = cli.main(["weak-error", "--model", "ginzburg_landau", "--theta", "1", "--h",
                     "2^-6,2^-7", "--h-ref", "2^-7", "--T", "1", "--M", "4", "--phi", "gauss",
                     "--out", str(tmp_path / "x.csv")])
    assert code == 2


def test_density_writes_one_file_per_theta(tmp_path, capsys):
    out = tmp_path / "d.csv"
    code = cli.main(["density", "--model", "mean_reverting", "--theta", "0,1", "--h", "2^-5",
                     "--T", "1", "--M", "500", "--out", str(out)])
    assert code in (0, 2)
    for th in ("0", "1"):
        text = (tmp_path / f"d_theta{th}.csv").read_text().splitlines()
        assert text[1] == ",".join(report.DENSITY_COLUMNS)
        assert len(text) == 2 + 100
    err = capsys.readouterr().err
    assert "baseline" in err and "L1(theta=0, theta=1)" in err


def test_contract_and_holder(tmp_path):
    assert cli.main(["contract", "--model", "ginzburg_landau", "--T", "5", "--M", "50",
                     "--out", str(tmp_path / "c.csv")]) == 0
    assert cli.main(["holder", "--model", "ginzburg_landau", "--M", "500",
                     "--out", str(tmp_path / "h.csv")]) == 0
    row = (tmp_path / "h.csv").read_text().splitlines()[2].split(",")
    assert row[0] == "holder" and row[5] == "holds"


def test_moments_command(tmp_path):
    code = cli.main(["moments", "--model", "mean_reverting", "--T", "4", "--M", "50",
                     "--out", str(tmp_path / "m.csv")])
    assert code == 0
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[1] == ",".join(report.MOMENT_COLUMNS)


def test_config_errors_exit_one(capsys):
    assert cli.main(["moments", "--model", "nope", "--theta", "2"]) == 1
    err = capsys.readouterr().err
    assert "unknown 'nope'" in err and "theta" in err
    assert cli.main(["simulate", "--model", "ginzburg_landau", "--h", "0.5", "--T", "1"]) == 1


def test_output_independent_of_threads(tmp_path):
    args = ["weak-error", "--model", "allen_cahn", "--h", "2^-4,2^-5", "--h-ref", "2^-7",
            "--T", "1", "--M", "300", "--seed", "9"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    cli.main(args + ["--threads", "1", "--out", str(a)])
    cli.main(args + ["--threads", "3", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ltpe", "check", "--model", "mean_reverting"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "h_max" in proc.stdout
