import json

import numpy as np
import pytest
import yaml

import spinpump.harness as harness
from spinpump import __version__
from spinpump.cli import main
from spinpump.evolve import NumericalError
from spinpump.harness import (
    ConfigError,
    ExperimentConfig,
    format_csv,
    haar_state,
    initial_state,
    preset_config,
    run_experiment,
    sweep,
    sweep_values,
)

SMALL = {
    "system": {"n_spins": 2, "n_max": 1},
    "initial_state": {"kind": "all_up"},
    "run": {"max_iters": 40},
}


def write_config(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def read_csv(path):
    lines = open(path).read().splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    body = [ln.split(",") for ln in lines if not ln.startswith("#")]
    return comments, body[0], body[1:]


# ---------------------------------------------------------------------------
# Configuration


def test_defaults_validate():
    cfg = ExperimentConfig.from_dict({})
    assert cfg.system_config().n_spins == 4
    assert cfg.system_config().couplings[1] == pytest.approx(0.05 * np.sqrt(2))
    assert len(cfg.base_sequence().pulses) == 5


@pytest.mark.parametrize(
    "raw",
    [
        {"bogus": {}},
        {"system": {"spins": 3}},
        {"system": {"n_spins": 3}},
        {"system": {"j1": -0.05}},
        {"system": "four"},
        {"sequence": {"parity": "maybe"}},
        {"sequence": {"pulses": []}},
        {"sequence": {"gamma": 0.0}},
        {"initial_state": {"kind": "thermal"}},
        {"run": {"method": "guess"}},
        {"run": {"max_iters": 0}},
        {"sweep": {"parameter": "sequence.nbar", "start": 0, "stop": 1, "count": 1}},
        {"sweep": {"parameter": "sequence.nbar", "start": 0, "stop": float("inf"), "count": 3}},
        {"sweep": {"start": 0, "stop": 1, "count": 3}},
        [1, 2],
    ],
)
def test_invalid_configs_raise(raw):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(raw)


def test_with_value_and_unknown_path():
    cfg = ExperimentConfig.from_dict(SMALL)
    both = cfg.with_value("noise.gamma_flip,noise.gamma_deph", 1e-4)
    assert both.noise_config().gamma_flip == both.noise_config().gamma_deph == 1e-4
    assert cfg.noise_config().gamma_flip == 0.0
    with pytest.raises(ConfigError):
        cfg.with_value("noise.gamma_bitflip", 1.0)
    with pytest.raises(ConfigError):
        sweep(cfg, "system.n_spins.x", [1.0])


def test_sweep_values():
    assert sweep_values({"parameter": "x", "start": 0, "stop": 1, "count": 3}) == [0.0, 0.5, 1.0]
    assert sweep_values({"parameter": "x", "values": [2, 3]}) == [2.0, 3.0]
    assert sweep_values({"parameter": "x", "values": []}) == []


def test_empty_sweep_returns_nothing():
    assert sweep(ExperimentConfig.from_dict(SMALL), "sequence.nbar", []) == []


def test_haar_states_are_seeded():
    a, b = haar_state(16, 3), haar_state(16, 3)
    assert np.array_equal(a, b)
    assert not np.allclose(a, haar_state(16, 4))
    assert np.trace(a) == pytest.approx(1.0)
    assert np.allclose(a @ a, a)


def test_initial_states():
    cfg = ExperimentConfig.from_dict(SMALL)
    rho = initial_state(cfg)
    assert rho.shape == (8, 8) and rho[0, 0] == 1
    t = initial_state(cfg.with_value("initial_state.kind", "target"))
    assert t[2, 2] == pytest.approx(0.5) and t[2, 4] == pytest.approx(0.5)
    m = initial_state(cfg.with_value("initial_state.kind", "maximally_mixed"))
    assert np.allclose(np.diag(m), [0.25, 0, 0.25, 0, 0.25, 0, 0.25, 0])


def test_preset_grids():
    _, grid = preset_config("fig3a")
    assert grid == {"start": 0.0, "stop": 0.2, "count": 21}
    base, grid = preset_config("fig3b", {"grid": {"count": 5}})
    assert grid["count"] == 5 and base.data["run"]["method"] == "fixed_point"
    with pytest.raises(ConfigError):
        preset_config("fig9")


# ---------------------------------------------------------------------------
# Running and CSV output


def test_run_experiment_trace_columns():
    header, rows, resolved = run_experiment(ExperimentConfig.from_dict(SMALL))
    assert header == ["iteration", "time_in_omega_t_units", "fidelity", "infidelity",
                      "even_parity", "mean_occupation"]
    assert rows[0][0] == 0 and rows[0][2] == pytest.approx(0.0)
    assert rows[-1][2] > 0.99
    assert [p["delta"] for p in resolved["resolved_pulses"]] == pytest.approx([-0.9, 0.9])


def test_fixed_point_method_matches_iteration():
    cfg = ExperimentConfig.from_dict({**SMALL, "run": {"max_iters": 2000}})
    iterated = harness.scalar_result(cfg)
    limit = harness.scalar_result(cfg.with_value("run.method", "fixed_point"))
    assert limit == pytest.approx(iterated, abs=1e-8)


def test_sweep_is_ordered_and_thread_independent():
    cfg = ExperimentConfig.from_dict({**SMALL, "run": {"method": "fixed_point"}})
    values = [0.0, 0.05, 0.1]
    serial = sweep(cfg, "sequence.nbar", values)
    threaded = sweep(cfg, "sequence.nbar", values, threads=3)
    assert serial == threaded
    assert serial[0] > serial[1] > serial[2]


def test_csv_format():
    text = format_csv(["a", "b"], [(1, 0.1), (2, 1 / 3)], {"k": 1})
    lines = text.splitlines()
    assert lines[0] == f"# spinpump {__version__}"
    assert json.loads(lines[1][len("# config: "):]) == {"k": 1}
    assert lines[2] == "a,b"
    assert lines[3] == "1,0.10000000000000001"
    assert float(lines[4].split(",")[1]) == 1 / 3


def test_cli_writes_csv_with_header(tmp_path):
    out = tmp_path / "out.csv"
    assert main(["--config", write_config(tmp_path, SMALL), "--out", str(out)]) == 0
    comments, header, rows = read_csv(out)
    assert comments[0] == f"# spinpump {__version__}"
    resolved = json.loads(comments[1][len("# config: "):])
    assert resolved["system"]["n_spins"] == 2 and "resolved_pulses" in resolved
    assert header[0] == "iteration"
    assert len(rows) >= 2


def test_cli_output_is_bit_identical(tmp_path):
    data = {**SMALL, "initial_state": {"kind": "random", "seed": 11}}
    path = write_config(tmp_path, data)
    outs = []
    for k in range(2):
        harness._optimized.clear()
        out = tmp_path / f"run{k}.csv"
        assert main(["--config", path, "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_cli_sweep_and_empty_sweep(tmp_path, capsys):
    data = {**SMALL, "run": {"method": "fixed_point"},
            "sweep": {"parameter": "sequence.nbar", "values": [0.0, 0.1]}}
    assert main(["--config", write_config(tmp_path, data)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[2] == "sequence.nbar,fidelity"
    assert len(lines) == 5
    data["sweep"]["values"] = []
    assert main(["--config", write_config(tmp_path, data)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[2] == "sequence.nbar,fidelity" and len(lines) == 3


def test_cli_output_key_in_config(tmp_path):
    out = tmp_path / "from_config.csv"
    assert main(["--config", write_config(tmp_path, {**SMALL, "output": str(out)})]) == 0
    assert out.exists()


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["--config", "/nonexistent/cfg.yaml"],
        ["--preset", "fig2", "--threads", "0"],
    ],
)
def test_cli_config_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: ")
    assert json.loads(err[len("error: "):])["kind"] == "config"


def test_cli_bad_yaml_and_unknown_key(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("system: [unclosed")
    assert main(["--config", str(bad)]) == 2
    assert main(["--config", write_config(tmp_path, {"system": {"spin_count": 2}})]) == 2
    errs = [ln for ln in capsys.readouterr().err.splitlines() if ln]
    assert all(json.loads(ln[len("error: "):])["kind"] == "config" for ln in errs)


def test_cli_numerical_failure_exit_3(tmp_path, monkeypatch, capsys):
    def fail(*args, **kwargs):
        raise NumericalError("trace drift 1e-3 exceeds 1e-08")

    monkeypatch.setattr("spinpump.cli.run_experiment", fail)
    assert main(["--config", write_config(tmp_path, SMALL)]) == 3
    err = capsys.readouterr().err.strip()
    payload = json.loads(err[len("error: "):])
    assert payload == {"kind": "numerical", "message": "trace drift 1e-3 exceeds 1e-08"}

