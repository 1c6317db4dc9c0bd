import pytest

from pistam.config import ConfigError, dump_config, load_config, parse_config
from pistam.loop import RunConfig


def test_defaults_when_no_path():
    assert load_config(None) == RunConfig()


def test_sections_are_applied():
    cfg = parse_config("""
[env]
step_translate = 0.1   # meters
social_rule_enabled = yes
[search]
simulations = 32
exploration = 2.0
[run]
iterations = 1
affordance_projection = 0, 1, 5
""")
    assert cfg.env.step_translate == 0.1 and cfg.env.social_rule_enabled
    assert cfg.search.simulations == 32 and cfg.search.exploration == 2.0
    assert cfg.iterations == 1 and cfg.affordance_projection == (0, 1, 5)


@pytest.mark.parametrize("text", [
    "[run]\nitertions = 2\n",
    "[bogus]\nx = 1\n",
    "[search]\nseed = 4\n",
    "[search]\nsimulations = many\n",
    "[search]\nsimulations = 0\n",
    "[run]\nsearch = 1\n",
    "no section header\n",
])
def test_bad_configs_raise(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_file_raises(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.cfg")


def test_dump_round_trips():
    cfg = parse_config("[env]\nw_grasp = 0.2\n[search]\nhorizon = 3\n[run]\nmaster_seed = 9\nepsilon_decay = true\n")
    text = dump_config(cfg)
    assert parse_config(text) == cfg
    assert dump_config(parse_config(text)) == text
