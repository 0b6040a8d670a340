import json
import shutil
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from clpt.cli import main
from clpt.config import PRESET_DEFAULTS, PRESETS, SCHEMA, ConfigError, validate_config
from clpt.io import (OutputConflict, OutputSet, csv_text, fmt, read_csv, read_run_csv, run_csv_text,
                     verify_manifest)


# ---------------------------------------------------------------- validation


def test_empty_file_needs_preset():
    with pytest.raises(ConfigError) as exc:
        validate_config("")
    assert any("preset is required" in e for e in exc.value.errors)


def test_empty_file_with_preset_gives_defaults():
    cfg = validate_config("", preset="stability-trace")
    assert cfg.problem == "1q" and cfg.workers == 1 and cfg.seed_base == 0
    for section, keys in SCHEMA.items():
        for key, (_, default, _, desc) in keys.items():
            assert desc
            expected = PRESET_DEFAULTS["stability-trace"].get(section, {}).get(key, default)
            if key == "preset":
                expected = "stability-trace"
            assert cfg.get(section, key) == expected
    assert len(cfg.T_grid) == 30


def test_negative_beta_names_the_field():
    text = "[experiment]\npreset = lmc-qsl\n[sampler]\nbeta = -1\n"
    with pytest.raises(ConfigError) as exc:
        validate_config(text)
    assert exc.value.errors == [exc.value.errors[0]]
    assert "line 4" in exc.value.errors[0] and "sampler.beta" in exc.value.errors[0]


def test_errors_are_aggregated():
    text = "[sampler]\nruns = 0\nsigma = abc\n[grid]\nL = 1\n"
    with pytest.raises(ConfigError) as exc:
        validate_config(text, preset="lmc-qsl")
    assert len(exc.value.errors) == 3
    assert [e.split(":")[0] for e in exc.value.errors] == ["line 2", "line 3", "line 5"]


def test_unknown_key_warns_with_nearest_key():
    cfg = validate_config("[sampler]\nbta = 3\n[samplr]\n", preset="lmc-qsl")
    assert any("nearest valid key is 'beta'" in w for w in cfg.warnings)
    assert any("did you mean [sampler]" in w for w in cfg.warnings)


def test_unknown_preset_and_syntax_errors():
    with pytest.raises(ConfigError):
        validate_config("", preset="fig-99")
    with pytest.raises(ConfigError):
        validate_config("no section header\n", preset="lmc-qsl")


def test_command_line_preset_overrides_file():
    cfg = validate_config("[experiment]\npreset = lmc-qsl\n", preset="hessian-spectrum")
    assert cfg.preset == "hessian-spectrum"


def test_explicit_range_replaces_preset_grid():
    cfg = validate_config("[grid]\nT_min = 1\nT_max = 2\nT_points = 3\n", preset="hessian-spectrum")
    assert cfg.T_grid == [1.0, 1.5, 2.0]
    with pytest.raises(ConfigError):
        validate_config("[grid]\nT_min = 2\nT_max = 1\n", preset="stability-trace")


def test_seeds_are_explicit():
    cfg = validate_config("[experiment]\nseed_base = 7\n[sampler]\nruns = 3\n", preset="lmc-qsl")
    assert cfg.seeds() == [7, 8, 9]


@pytest.mark.parametrize("preset", PRESETS)
def test_every_preset_validates(preset):
    cfg = validate_config("", preset=preset)
    assert cfg.T_grid and json.dumps(cfg.echo())


# ---------------------------------------------------------------- persistence


@given(st.floats(allow_nan=True, allow_infinity=True))
def test_number_format_round_trips(x):
    s = fmt(x)
    assert (np.isnan(x) and s == "nan") or float(s) == x


def test_csv_round_trip(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text(csv_text(["T", "q"], [(0.1, 1 / 3), (2.6, float("nan"))]))
    header, rows = read_csv(p)
    assert header == ["T", "q"]
    assert rows[0] == [0.1, 1 / 3] and np.isnan(rows[1][1])


def test_run_csv_round_trip(tmp_path, rng):
    samples = rng.uniform(-1, 1, (4, 6))
    meta = dict(problem="1q", T=2.6, beta=1e5, sigma=10**-1.5, seed=3)
    p = tmp_path / "run.csv"
    p.write_text(run_csv_text(meta, [10, 20, 30, 40], rng.random(4), samples))
    m, its, I, s = read_run_csv(p)
    assert m["L"] == 6 and m["seed"] == 3 and m["beta"] == 1e5
    assert list(its) == [10, 20, 30, 40]
    assert np.array_equal(s, samples)


def test_output_set_refuses_silent_overwrite(tmp_path):
    a = OutputSet(tmp_path)
    a.add_csv("x.csv", ["v"], [(1.0,)])
    man = a.commit({"k": 1})
    assert verify_manifest(tmp_path) == []
    same = OutputSet(tmp_path)
    same.add_csv("x.csv", ["v"], [(1.0,)])
    assert same.commit({"k": 1}) == man
    other = OutputSet(tmp_path)
    other.add_csv("x.csv", ["v"], [(2.0,)])
    with pytest.raises(OutputConflict):
        other.commit({"k": 1})
    (tmp_path / "x.csv").write_text("tampered\n")
    assert verify_manifest(tmp_path) == ["x.csv"]
    with pytest.raises(ValueError):
        a.add_csv("x.csv", ["v"], [])


# ---------------------------------------------------------------- command line


def _write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_stability_trace_preset(tmp_path):
    out = tmp_path / "out"
    assert main(["stability-trace", "--out", str(out)]) == 0
    header, rows = read_csv(out / "transitions.csv")
    assert header == ["name", "T_value", "n_plus"]
    T_c = [r[1] for r in rows if r[0] == "T_c"][0]
    assert abs(T_c - 0.98) < 0.05
    assert verify_manifest(out) == []
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["files"]) == {p.name for p in out.iterdir() if p.name != "manifest.json"}


def test_rerun_is_byte_identical(tmp_path, capsys):
    cfg = _write(tmp_path, "[grid]\nT = 2.52, 2.6\nL = 32\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["hessian-spectrum", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["hessian-spectrum", "--config", str(cfg), "--out", str(b), "--workers", "2"]) == 0
    for f in a.iterdir():
        assert f.read_bytes() == (b / f.name).read_bytes()
    # rerunning into the same directory is a no-op
    assert main(["hessian-spectrum", "--config", str(cfg), "--out", str(a)]) == 0


def test_differing_rerun_is_refused(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["hessian-spectrum", "--config", str(_write(tmp_path, "[grid]\nL = 16\n")),
                 "--out", str(out)]) == 0
    code = main(["hessian-spectrum", "--config", str(_write(tmp_path, "[grid]\nL = 20\n", "d.ini")),
                 "--out", str(out)])
    assert code == 4
    assert "refusing to overwrite" in capsys.readouterr().err


def test_invalid_parameter_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, "[sampler]\nruns = 0\n")
    assert main(["phase-diagram-sd", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "sampler.runs" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_unknown_preset_exit_code(capsys):
    assert main(["fig-99"]) == 2


def test_bad_arguments_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["stability-trace", "--workers", "many"])
    assert exc.value.code == 2


def test_missing_config_is_io_error(tmp_path):
    assert main(["stability-trace", "--config", str(tmp_path / "nope.ini")]) == 4


def test_unwritable_output_is_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    cfg = _write(tmp_path, "[grid]\nT = 2.52\nL = 16\n")
    assert main(["hessian-spectrum", "--config", str(cfg), "--out", str(blocker / "sub")]) == 4


def test_runtime_failure_exit_code(tmp_path, capsys):
    # at T = 0.5 the reference spectrum has no negative eigenvalue, so there is no saddle
    cfg = _write(tmp_path, "[grid]\nT = 0.5\nL = 16\n[field]\nL_list = 16\n")
    assert main(["critical-scaling", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    assert "critical-scaling failed" in capsys.readouterr().err


def test_worker_environment_override(tmp_path, monkeypatch, capsys):
    cfg = _write(tmp_path, "[experiment]\nworkers = 1\n[grid]\nT = 2.52\nL = 16\n")
    monkeypatch.setenv("CLPT_WORKERS", "lots")
    assert main(["hessian-spectrum", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 2
    monkeypatch.setenv("CLPT_WORKERS", "0")
    assert main(["hessian-spectrum", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 2
    monkeypatch.setenv("CLPT_WORKERS", "2")
    assert main(["hessian-spectrum", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    # the command line wins over the environment
    assert main(["hessian-spectrum", "--config", str(cfg), "--out", str(tmp_path / "b"),
                 "--workers", "1"]) == 0


def test_seed_base_override(tmp_path):
    cfg = _write(tmp_path, "[grid]\nT = 0.5\nN = 12\n[sampler]\nruns = 3\n")
    assert main(["phase-diagram-sd", "--config", str(cfg), "--out", str(tmp_path / "a"),
                 "--seed-base", "5"]) == 0
    _, rows = read_csv(tmp_path / "a" / "sd_runs.csv")
    assert [r[1] for r in rows] == [5, 6, 7]


@pytest.mark.skipif(shutil.which("clpt") is None, reason="console script not installed")
def test_console_script():
    res = subprocess.run(["clpt", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "preset" in res.stdout


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "clpt.cli", "fig-99"], capture_output=True, text=True)
    assert res.returncode == 2
