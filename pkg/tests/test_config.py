import pytest

from fedinv import config
from fedinv.errors import ConfigError

MINIMAL = """
[[clients]]
id = 0
env = 0
"""


def write(tmp_path, text):
    p = tmp_path / "c.toml"
    p.write_text(text)
    return p


def test_minimal_config_gets_defaults(tmp_path):
    cfg = config.parse_config(write(tmp_path, MINIMAL))
    assert cfg.schedule.lam == 1e-3 and cfg.schedule.pretrain.K == 10
    assert cfg.model.arch == "linear" and len(cfg.clients) == 1


def test_negative_lambda_is_named(tmp_path):
    with pytest.raises(ConfigError) as err:
        config.parse_config(write(tmp_path, MINIMAL + "[schedule]\nlambda = -0.1\n"))
    assert any(v.startswith("schedule.lambda") for v in err.value.violations)


def test_all_violations_reported(tmp_path):
    text = MINIMAL + "[schedule]\nlambda = -1.0\nT = -3\ntypo = 1\n[model]\narch = 'cnn'\n"
    with pytest.raises(ConfigError) as err:
        config.parse_config(write(tmp_path, text))
    keys = {v.split(":")[0] for v in err.value.violations}
    assert {"schedule.lambda", "schedule.T", "schedule.typo", "model.arch"} <= keys


def test_type_mismatch_has_key_path(tmp_path):
    with pytest.raises(ConfigError) as err:
        config.parse_config(write(tmp_path, MINIMAL + "[data]\nn_per_env = 'many'\n"))
    assert err.value.violations == ["data.n_per_env: expected an integer, got str"]


def test_unknown_env_and_holdout(tmp_path):
    text = "[data]\ncorr = [0.9, 0.1]\nholdout_env = 1\n[[clients]]\nid = 0\nenv = 1\n" \
           "[[clients]]\nid = 1\nenv = 5\n"
    with pytest.raises(ConfigError) as err:
        config.parse_config(write(tmp_path, text))
    assert any("holdout env" in v for v in err.value.violations)
    assert any("env 5 does not exist" in v for v in err.value.violations)


def test_round_trip(tmp_path):
    cfg = config.parse_config("configs/quickstart.toml")
    again = config.parse_config(write(tmp_path, config.dumps(cfg)))
    assert again == cfg


def test_overrides_do_not_touch_file(tmp_path):
    p = write(tmp_path, MINIMAL)
    before = p.read_bytes()
    cfg = config.parse_config(p).with_overrides(seed=5, out="x", lam=0.5)
    assert (cfg.seed, cfg.outputs.dir, cfg.schedule.lam) == (5, "x", 0.5)
    assert p.read_bytes() == before


def test_missing_and_broken_files(tmp_path):
    with pytest.raises(ConfigError):
        config.parse_config(tmp_path / "nope.toml")
    with pytest.raises(ConfigError):
        config.parse_config(write(tmp_path, "[model\n"))
