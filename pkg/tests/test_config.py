import pytest

from aptshield.config import RunConfig, load_config
from aptshield.errors import ConfigError


def write(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text, encoding="utf-8")
    return p


def test_defaults_without_file():
    cfg = load_config(None)
    assert cfg == RunConfig()
    assert cfg.sparsity_config().threshold_mode == "quartile_v"
    assert cfg.scenario_config().seed == 7


def test_values_parsed_and_typed(tmp_path):
    cfg = load_config(write(tmp_path, """
[run]
seed = 3
[scenario]
calibrated = true
noise_alert_rate = 0.5
[sparsity]
threshold_mode = mean_phi
[ae]
d_hidden = 5
"""))
    assert cfg.seed == 3
    assert cfg.scenario.calibrated is True
    assert cfg.scenario.noise_alert_rate == 0.5
    assert cfg.sparsity.threshold_mode == "mean_phi"
    assert cfg.ae.d_hidden == 5


@pytest.mark.parametrize("text", [
    "[bogus]\nx = 1\n",
    "[ae]\nlayers = 3\n",
    "[run]\nseeds = 1\n",
    "[ae]\nepochs = many\n",
    "[ae]\nepochs = 0\n",
    "[sparsity]\nsuppression = 1.5\n",
    "[sparsity]\nthreshold_mode = median\n",
    "[scenario]\nn_hosts = 2\n",
    "[scenario]\ncalibrated = perhaps\n",
    "[preprocess]\ntest_fraction = 1.0\n",
    "[graph]\nlink_max_severity = 4\n",
    "not an ini file",
])
def test_rejects_unknown_and_out_of_range(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, text))


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")


def test_overrides_and_digest():
    base = RunConfig()
    same = base.with_overrides(seed=None, scenario__calibrated=None)
    assert same == base and same.digest() == base.digest()
    other = base.with_overrides(seed=9, scenario__calibrated=True)
    assert other.seed == 9 and other.scenario.calibrated
    assert other.digest() != base.digest()


def test_ini_round_trip(tmp_path):
    cfg = RunConfig().with_overrides(seed=11, ae__learning_rate=2.5, graph__target="mill")
    assert load_config(write(tmp_path, cfg.to_ini())) == cfg
