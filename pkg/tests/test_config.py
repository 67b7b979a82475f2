import pytest

from deidjoint.config import ConfigError, describe_defaults, parse_config


def test_defaults():
    cfg = parse_config("")
    assert cfg.train.base_lr == 0.1 and cfg.train.batch_size == 32
    assert cfg.train.patience == 3 and cfg.train.ce_branch_lr == 0.2


def test_coercion_and_override_precedence():
    text = "[train]\nbase_lr = 0.05\nbatch_size = 8\nrecord_wall_time = yes\n"
    cfg = parse_config(text, {"train": {"batch_size": "4"}})
    assert cfg.train.base_lr == 0.05
    assert cfg.train.batch_size == 4
    assert cfg.train.record_wall_time is True


@pytest.mark.parametrize("text", [
    "[optimizer]\nlr = 1\n",
    "[train]\nlearning_rate = 1\n",
    "[train]\nbatch_size = many\n",
    "[train]\nbase_lr = -1\n",
    "[train]\nrecord_wall_time = maybe\n",
    "not an ini file",
])
def test_bad_config_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_unknown_override_rejected():
    with pytest.raises(ConfigError):
        parse_config("", {"model": {"bogus": "1"}})


def test_describe_defaults_lists_every_section():
    text = describe_defaults()
    for head in ("[train]", "[model]", "[gumbel]"):
        assert head in text
    assert "base_lr = 0.1" in text
