import pytest

from app.cli import parse_args, resolve_config
from app.config import Settings, dump_run_config, load_run_config, parse_overrides
from app.exceptions import ConfigError
from app.models.run_config import TwinMode


def write_ini(path, text):
    path.write_text(text)
    return str(path)


class TestOverrides:
    def test_nested_mapping(self):
        assert parse_overrides(["training.steps=10", "twin.mode = sequence", "eval.window_sweep_h=1,2"]) == {
            "training": {"steps": "10"},
            "twin": {"mode": "sequence"},
            "eval": {"window_sweep_h": "1,2"},
        }

    @pytest.mark.parametrize("pair", ["training.steps", "steps=10"])
    def test_malformed(self, pair):
        with pytest.raises(ConfigError):
            parse_overrides([pair])


class TestLoadRunConfig:
    def test_defaults(self):
        config = load_run_config()
        assert config.model.history == 8
        assert config.twin.steps == 20
        assert config.eval.logistic_eps == [1e-4, 1e-6, 1e-8]

    def test_file_then_overrides(self, tmp_path):
        path = write_ini(tmp_path / "run.ini", "[training]\nsteps = 50\nbatch = 4\n\n[twin]\nmode = sequence\n")
        config = load_run_config(path, {"training": {"steps": "7"}})
        assert config.training.steps == 7
        assert config.training.batch == 4
        assert config.twin.mode == TwinMode.SEQUENCE

    @pytest.mark.parametrize("text", [
        "[training]\nbogus = 1\n",
        "[nonsense]\nsteps = 1\n",
        "[training]\nsteps = 0\n",
        "[training]\nsteps = many\n",
        "steps = 1\n",
    ])
    def test_rejects_bad_files(self, tmp_path, text):
        with pytest.raises(ConfigError):
            load_run_config(write_ini(tmp_path / "bad.ini", text))

    @pytest.mark.parametrize("key", ["system.seed", "dataset.split_seed", "training.seed", "twin.seed"])
    def test_rejects_negative_seeds(self, key):
        section, name = key.split(".")
        with pytest.raises(ConfigError, match=name):
            load_run_config(overrides={section: {name: "-1"}})

    def test_zero_seed_is_accepted(self):
        config = load_run_config(overrides={"training": {"seed": "0"}, "twin": {"seed": "0"}})
        assert config.training.seed == 0 and config.twin.seed == 0

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(str(tmp_path / "absent.ini"))

    def test_dump_reloads_to_the_same_config(self, tmp_path, tiny_run_config):
        path = write_ini(tmp_path / "dumped.ini", dump_run_config(tiny_run_config))
        assert load_run_config(path) == tiny_run_config


class TestCommandLinePrecedence:
    def test_flags_seed_and_set(self, tmp_path):
        path = write_ini(tmp_path / "run.ini", "[training]\nsteps = 50\nseed = 3\n")
        args = parse_args([
            "train", "--config", path, "--steps", "60", "--seed", "9", "--set", "training.steps=70",
        ])
        config = resolve_config(args)
        assert config.training.steps == 70
        assert config.training.seed == 9
        assert config.system.seed == 9
        assert config.twin.seed == 9

    def test_flag_beats_file(self, tmp_path):
        path = write_ini(tmp_path / "run.ini", "[twin]\nn_seeds = 3\n")
        config = resolve_config(parse_args(["reconstruct", "--config", path, "--seeds", "5"]))
        assert config.twin.n_seeds == 5


class TestSettings:
    def test_environment(self, monkeypatch):
        monkeypatch.setenv("PAINT_THREADS", "3")
        monkeypatch.setenv("PAINT_LOG_LEVEL", "debug")
        settings = Settings()
        assert settings.threads == 3
        assert settings.log_level == "DEBUG"

    @pytest.mark.parametrize("value", ["-1", "four"])
    def test_invalid_thread_count(self, monkeypatch, value):
        monkeypatch.setenv("PAINT_THREADS", value)
        with pytest.raises(ConfigError):
            Settings()
