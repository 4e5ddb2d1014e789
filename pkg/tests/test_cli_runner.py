"""Config grammar, provenance, determinism, and exit codes of the
command line front end."""

import json
import math

import numpy as np
import pytest

from nmoptomech.cli_runner import RunConfig, _onset_time, main, parse_config
from nmoptomech.errors import ConfigError

MINIMAL = """\
[system]
delta = 1.0
coupling = 0.1
[bath]
kernel = ou
decay = 2.0
gamma = 0.6
"""


def entry(cfg: RunConfig, section, key):
    for sec, k, val, src in cfg.resolved:
        if (sec, k) == (section, key):
            return val, src
    raise KeyError((section, key))


def test_defaults_and_provenance():
    cfg = parse_config(MINIMAL)
    assert cfg.gamma == 0.6
    assert cfg.dt == 0.01
    assert cfg.t_final == 30.0
    assert cfg.engine == "moments"
    assert cfg.dims == (10, 10)
    assert entry(cfg, "bath", "gamma")[1] == "file"
    assert entry(cfg, "grid", "dt")[1] == "default"
    assert cfg.gamma_source == "file"


def test_flag_overrides_beat_file():
    cfg = parse_config(MINIMAL, overrides={"gamma": "1.3", "dt": "0.02"})
    assert cfg.gamma == 1.3
    assert cfg.dt == 0.02
    assert entry(cfg, "bath", "gamma")[1] == "flag:--gamma"
    assert entry(cfg, "grid", "dt")[1] == "flag:--dt"


def test_scenario_presets_fill_in():
    cfg = parse_config("", scenario="fig4")
    assert cfg.decay == 0.4
    assert cfg.gamma == 1.0
    assert entry(cfg, "bath", "decay")[1] == "preset:fig4"
    assert cfg.gamma_source == "preset:fig4"


def test_unknown_key_reports_line_and_suggestion():
    with pytest.raises(ConfigError) as info:
        parse_config("[bath]\ngama = 0.5\n")
    msg = str(info.value)
    assert "gama" in msg and "line 2" in msg and "gamma" in msg


def test_unknown_section_rejected():
    with pytest.raises(ConfigError) as info:
        parse_config("[baths]\ngamma = 0.5\n")
    assert "baths" in str(info.value)


def test_type_errors_name_the_key():
    with pytest.raises(ConfigError) as info:
        parse_config("[bath]\ngamma = fast\n")
    assert "gamma" in str(info.value)
    with pytest.raises(ConfigError):
        parse_config("[run]\ndims = 8\n")
    with pytest.raises(ConfigError):
        parse_config("[run]\nengine = euler\n")


def test_validation_catches_bad_grid_and_bath():
    with pytest.raises(ConfigError):
        parse_config(MINIMAL + "[grid]\ndt = 0\n")
    with pytest.raises(ConfigError):
        parse_config(MINIMAL + "[grid]\nt_final = 0.001\n")
    with pytest.raises(ConfigError):
        parse_config("[bath]\nkernel = ou\ndecay = -1\ngamma = 0.5\n")


def test_raw_cavity_parameters_all_or_none():
    raw = """\
[system]
omega_c = 5.0
g = 0.02
omega_drive = 4.9
drive = 1.0
kappa = 0.1
"""
    cfg = parse_config(raw)
    assert cfg.physical is not None
    sysl = cfg.system()
    assert sysl.G > 0
    with pytest.raises(ConfigError):
        parse_config("[system]\nomega_c = 5.0\ng = 0.02\n")


def test_sweep_parsing_and_restrictions():
    cfg = parse_config(MINIMAL + "[sweep]\nparameter = gamma\nvalues = 0.3, 0.6, 1.2\n")
    assert cfg.sweep == ("gamma", (0.3, 0.6, 1.2))
    cfg = parse_config(MINIMAL + "[sweep]\nparameter = delta\nstart = 1\nstop = 2\nstep = 0.5\n")
    assert cfg.sweep[0] == "delta"
    assert np.allclose(cfg.sweep[1], [1.0, 1.5, 2.0])
    with pytest.raises(ConfigError):
        parse_config(MINIMAL + "[sweep]\nparameter = seed\nvalues = 1, 2\n")
    with pytest.raises(ConfigError):
        parse_config(MINIMAL + "[sweep]\nparameter = gamma\nvalues = 0.3\n",
                     scenario="fig2")


def test_temperature_needs_master_engine_and_ou():
    good = """\
[system]
delta = 1.0
coupling = 0.1
[bath]
kernel = ou
decay = 2.0
gamma = 0.6
temperature = 0.5
[run]
engine = fock-master
"""
    cfg = parse_config(good)
    assert cfg.temperature == 0.5
    with pytest.raises(ConfigError):
        parse_config(good.replace("engine = fock-master", "engine = moments"))
    with pytest.raises(ConfigError):
        parse_config(good, scenario="fig2")


def test_onset_time_interpolates():
    t = np.array([0.0, 1.0, 2.0, 3.0])
    en = np.array([0.0, 0.05, 0.15, 0.3])
    # crosses 0.1 midway between t=1 and t=2
    assert _onset_time(t, en, 0.1) == pytest.approx(1.5)
    assert math.isnan(_onset_time(t, en, 0.5))


def test_run_is_byte_identical(tmp_path):
    cfg_text = """\
[system]
delta = 1.0
coupling = 0.1
[bath]
kernel = ou
decay = 2.0
gamma = 0.6
[grid]
dt = 0.02
t_final = 2.0
"""
    p = tmp_path / "c.cfg"
    p.write_text(cfg_text)
    outs = []
    for name in ("o1", "o2"):
        out = tmp_path / name
        rc = main(["run", "--scenario", "custom", "--config", str(p),
                   "--out", str(out)])
        assert rc == 0
        outs.append(out)
    # across distinct out dirs only the echoed out path may differ
    for fname in ("timeseries.csv", "coefficients.csv", "manifest.json"):
        a = (outs[0] / fname).read_bytes()
        b = (outs[1] / fname).read_bytes()
        assert a == b, fname
    # rerunning into the same directory reproduces every byte
    before = {f.name: f.read_bytes() for f in outs[0].iterdir()}
    assert main(["run", "--scenario", "custom", "--config", str(p),
                 "--out", str(outs[0])]) == 0
    after = {f.name: f.read_bytes() for f in outs[0].iterdir()}
    assert before == after


def test_csv_round_trips_metric_exactly(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text(MINIMAL + "[grid]\ndt = 0.02\nt_final = 2.0\n")
    out = tmp_path / "o"
    assert main(["run", "--scenario", "custom", "--config", str(p),
                 "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    rows = (out / "timeseries.csv").read_text().strip().splitlines()
    header = rows[0].split(",")
    last = rows[-1].split(",")
    en_csv = float(last[header.index("en")])
    assert en_csv == manifest["metrics"]["en_final"]


def test_resolved_echo_lists_sources(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text(MINIMAL + "[grid]\ndt = 0.02\nt_final = 1.0\n")
    out = tmp_path / "o"
    main(["run", "--scenario", "custom", "--config", str(p), "--out", str(out),
          "--gamma", "0.9"])
    echo = (out / "resolved.cfg").read_text()
    assert "# flag:--gamma" in echo
    assert "# file" in echo
    assert "# default" in echo


def test_sweep_writes_indexed_subruns(tmp_path):
    cfg_text = MINIMAL + """\
[grid]
dt = 0.02
t_final = 1.0
[sweep]
parameter = gamma
values = 0.5, 1.0
"""
    p = tmp_path / "c.cfg"
    p.write_text(cfg_text)
    out = tmp_path / "o"
    assert main(["run", "--scenario", "custom", "--config", str(p),
                 "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["sweep"]["points"]) == 2
    sub = out / manifest["sweep"]["points"][0]["dir"]
    assert (sub / "timeseries.csv").exists()
    assert (sub / "point.json").exists()


def test_gamma_flag_narrows_multi_gamma_scenario(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("")
    out1 = tmp_path / "all"
    assert main(["run", "--scenario", "fig3", "--config", str(p),
                 "--out", str(out1), "--tfinal", "2.0"]) == 0
    m1 = json.loads((out1 / "manifest.json").read_text())
    out2 = tmp_path / "one"
    assert main(["run", "--scenario", "fig3", "--config", str(p),
                 "--out", str(out2), "--tfinal", "2.0", "--gamma", "0.6"]) == 0
    m2 = json.loads((out2 / "manifest.json").read_text())
    assert len(m1["metrics"]["en_final"]) == 4  # three memory rates plus
    assert len(m2["metrics"]["en_final"]) == 2  # the memoryless reference


def test_exit_code_two_on_config_error(tmp_path, capsys):
    p = tmp_path / "c.cfg"
    p.write_text("[bath]\ngama = 1\n")
    rc = main(["run", "--scenario", "custom", "--config", str(p),
               "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "config error:" in capsys.readouterr().err


def test_exit_code_three_on_numerical_failure(tmp_path, capsys):
    # resonant environment above the damping threshold: the coefficient
    # system blows up in finite time and the run must fail loudly
    cfg_text = """\
[system]
delta = 1.0
coupling = 0.1
[bath]
kernel = ou
decay = 2.0
gamma = 1.0
omega_env = 1.0
[grid]
dt = 0.01
t_final = 4.0
"""
    p = tmp_path / "c.cfg"
    p.write_text(cfg_text)
    rc = main(["run", "--scenario", "custom", "--config", str(p),
               "--out", str(tmp_path / "o")])
    assert rc == 3
    assert "numeric failure:" in capsys.readouterr().err


def test_missing_config_file_is_config_error(tmp_path, capsys):
    rc = main(["run", "--scenario", "custom",
               "--config", str(tmp_path / "absent.cfg"),
               "--out", str(tmp_path / "o")])
    assert rc == 2


def test_trajectory_engine_runs_end_to_end(tmp_path):
    cfg_text = """\
[system]
delta = 1.0
coupling = 0.1
[bath]
kernel = ou
decay = 2.0
gamma = 0.6
[grid]
dt = 0.02
t_final = 1.0
[run]
engine = trajectories
paths = 50
dims = 4,4
seed = 7
"""
    p = tmp_path / "c.cfg"
    p.write_text(cfg_text)
    out = tmp_path / "o"
    assert main(["run", "--scenario", "custom", "--config", str(p),
                 "--out", str(out)]) == 0
    rows = (out / "timeseries.csv").read_text().strip().splitlines()
    assert rows[0].startswith("t,en")
    assert len(rows) > 3
