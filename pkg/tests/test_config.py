import pytest

from otsep.core.config import METHODS, Settings, load_settings


def test_load_from_yaml(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("bcd:\n  restarts: 3\nsimulation:\n  N: [4, 5]\n  K: 2\n")
    loaded = Settings.load_from_yaml(str(path))
    assert loaded.bcd.restarts == 3
    assert loaded.simulation.N == [4, 5]
    assert loaded.solver.refactor_interval == 64


def test_missing_yaml(tmp_path):
    with pytest.raises(FileNotFoundError):
        Settings.load_from_yaml(str(tmp_path / "nope.yaml"))


def test_env_override(monkeypatch):
    monkeypatch.setenv("BCD__RESTARTS", "7")
    assert Settings().bcd.restarts == 7


def test_example_file_matches_defaults():
    example = Settings.load_from_yaml("config/config.example.yaml")
    assert example.model_dump() == Settings().model_dump()


def test_bad_file_falls_back_to_defaults(tmp_path, monkeypatch):
    path = tmp_path / "broken.yaml"
    path.write_text("bcd:\n  restarts: -1\n")
    monkeypatch.setenv("OTSEP_CONFIG", str(path))
    assert load_settings().bcd.restarts == 10


def test_unknown_sweep_method():
    with pytest.raises(ValueError):
        Settings(sweep={"methods": ["oracle", "magic"]})
    assert Settings().sweep.methods == list(METHODS)
