import pytest

from radreid.config import KEYS, as_flat_dict, dump_config, load_config, parse_text, resolve
from radreid.errors import ConfigError
from radreid.trainer import TrainConfig


def test_defaults_resolve():
    cfg = load_config()
    assert cfg.train == TrainConfig() and cfg.pt_mode == "features"


def test_file_and_override_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("[train]\ngamma = 0.7\nK = 2\n[synth]\nsynth_identities = 9\n")
    cfg = load_config(path, ["gamma=0.25"])
    assert cfg.train.gamma == 0.25 and cfg.train.K == 2 and cfg.synth_identities == 9


def test_sectionless_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("lr = 0.01\ncamera_filter = off\n")
    cfg = load_config(path)
    assert cfg.train.lr == 0.01 and cfg.camera_filter is False


def test_unknown_key_is_an_error():
    with pytest.raises(ConfigError, match="unknown"):
        load_config(overrides=["gamme=0.5"])


@pytest.mark.parametrize("pair", ["lr=fast", "camera_filter=maybe", "K=1.5", "noequals"])
def test_bad_values_rejected(pair):
    with pytest.raises(ConfigError):
        load_config(overrides=[pair])


def test_out_of_range_values_rejected():
    with pytest.raises(ConfigError):
        load_config(overrides=["pt_mode=video"])
    with pytest.raises(ConfigError):
        load_config(overrides=["gamma=-1"])


def test_duplicate_key_across_sections():
    with pytest.raises(ConfigError):
        parse_text("[a]\ngamma = 1\n[b]\ngamma = 2\n")


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/run.cfg")


def test_dump_round_trips(tmp_path):
    cfg = load_config(overrides=["gamma=0.3", "aug_flips=true", "synth_dim=12"])
    text = dump_config(cfg, {"command": "eval"})
    assert text.startswith("# command: eval\n")
    (tmp_path / "m.cfg").write_text(text)
    assert load_config(tmp_path / "m.cfg") == cfg
    assert set(as_flat_dict(cfg)) == set(KEYS)


def test_resolve_takes_strings():
    assert resolve({"epochs_init": "3"}).train.epochs_init == 3
