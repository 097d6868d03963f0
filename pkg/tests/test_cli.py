import os

import pytest

from flocklab import cli


def run_main(args):
    return cli.main(args)


def test_sticking_subcommand_manifest(tmp_path):
    out = str(tmp_path / "out")
    code = run_main(["sticking", "--alpha", "0.5", "--x0", "1", "--v0", "-2",
                     "--out", out])
    assert code == 0
    runs = os.listdir(os.path.join(out, "sticking"))
    assert len(runs) == 1
    run_dir = os.path.join(out, "sticking", runs[0])
    manifest = open(os.path.join(run_dir, "manifest.txt")).read()
    assert "result.sticks = True" in manifest
    assert "status = ok" in manifest
    assert os.path.exists(os.path.join(run_dir, "data.csv"))
    assert os.path.exists(os.path.join(run_dir, "plot.svg"))


def test_config_error_empty_c_list(tmp_path):
    code = run_main(["hydro-line", "--c", "", "--out", str(tmp_path)])
    assert code == 2


def test_config_error_bad_value(tmp_path):
    code = run_main(["particles", "--alpha", "-1", "--out", str(tmp_path)])
    assert code == 2
    code = run_main(["particles", "--alpha", "zebra", "--out", str(tmp_path)])
    assert code == 2


def test_identical_config_reruns_byte_identical(tmp_path):
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    args = ["particles", "--n", "4", "--d", "2", "--alpha", "1.0",
            "--t-end", "2.0", "--samples", "21", "--seed", "7"]
    assert run_main(args + ["--out", out1]) == 0
    assert run_main(args + ["--out", out2]) == 0
    sub1 = os.listdir(os.path.join(out1, "particles"))[0]
    sub2 = os.listdir(os.path.join(out2, "particles"))[0]
    assert sub1 == sub2  # same config hash
    for name in ("data.csv", "events.csv", "plot.svg"):
        b1 = open(os.path.join(out1, "particles", sub1, name), "rb").read()
        b2 = open(os.path.join(out2, "particles", sub2, name), "rb").read()
        assert b1 == b2


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("alpha = 0.5\nx0 = 1.0\nv0 = -2.0\n# comment line\n")
    out = str(tmp_path / "out")
    code = run_main(["sticking", "--config", str(cfg), "--v0", "-1.0", "--out", out])
    assert code == 0
    runs = os.listdir(os.path.join(out, "sticking"))
    manifest = open(os.path.join(out, "sticking", runs[0], "manifest.txt")).read()
    assert "param.v0 = -1.0" in manifest
    assert "result.sticks = False" in manifest


def test_hydro_line_smoke_run(tmp_path):
    out = str(tmp_path / "out")
    code = run_main(["hydro-line", "--case", "1", "--c", "-1.0", "--t-end", "5",
                     "--dx", "0.2", "--dt", "0.2", "--out", out])
    assert code == 0
    runs = os.listdir(os.path.join(out, "hydro-line"))
    run_dir = os.path.join(out, "hydro-line", runs[0])
    assert os.path.exists(os.path.join(run_dir, "data.csv"))
    assert os.path.exists(os.path.join(run_dir, "plot.svg"))


def test_hydro_torus_run(tmp_path):
    out = str(tmp_path / "out")
    code = run_main(["hydro-torus", "--n", "64", "--gamma", "1.0",
                     "--t-end", "1.0", "--out", out])
    assert code == 0


def test_meanfield_run(tmp_path):
    out = str(tmp_path / "out")
    code = run_main(["meanfield", "--alpha", "0.25", "--n-list", "4,8",
                     "--t-end", "0.5", "--out", out])
    assert code == 0
    runs = os.listdir(os.path.join(out, "meanfield"))
    data = open(os.path.join(out, "meanfield", runs[0], "data.csv")).read()
    assert data.startswith("N,t,d1_vs_double,d1_initial_gap")


def test_control_square_requires_four(tmp_path):
    code = run_main(["control", "--n", "5", "--pattern", "square",
                     "--t-end", "1", "--out", str(tmp_path)])
    assert code == 2


def test_unknown_config_key_rejected():
    with pytest.raises(cli.ConfigError):
        cli.ExperimentConfig("sticking", {"nonsense": 1})


def test_run_id_stable_under_param_order():
    a = cli.ExperimentConfig("sticking", {"alpha": 0.5, "x0": 1.0, "v0": -2.0})
    b = cli.ExperimentConfig("sticking", {"v0": -2.0, "alpha": 0.5, "x0": 1.0})
    assert a.run_id() == b.run_id()
