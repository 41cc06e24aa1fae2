import pytest

from gaitforge import config
from gaitforge.config import ConfigError


def test_empty_text_gives_defaults():
    assert config.loads("") == config.default_config()
    d = config.default_config()
    assert d.cma.budget == 480
    assert d.sweep.seed_speed == 0.4
    assert d.episode.damping == (5.0, 5.0)
    assert d.seed_gains.as_array().tolist() == [-0.2, -0.5, 50.0, 200.0]


def test_partial_config_overrides_only_given_keys():
    cfg = config.loads("[episode]\nt_sim = 3.5\n[cma]\nbudget = 64\n[controller]\ndamping_knee = 2\n")
    assert cfg.episode.t_sim == 3.5
    assert cfg.cma.budget == 64
    assert cfg.episode.damping == (5.0, 2.0)
    assert cfg.model == config.default_config().model


def test_dotted_keys_and_comments():
    cfg = config.loads("# comment\nepisode.cost_fall = 50   # inline\nrun.out = results\n")
    assert cfg.episode.costs.fall == 50.0
    assert cfg.out == "results"


def test_negative_duration_names_key_and_line():
    with pytest.raises(ConfigError, match=r"cfg\.ini:2: episode\.t_sim = -1 is out of range"):
        config.loads("\nepisode.t_sim = -1\n", "cfg.ini")


@pytest.mark.parametrize("text,pattern", [
    ("nosuch.key = 1\n", r":1: unknown key 'nosuch.key'"),
    ("[episode]\nnosuch = 1\n", r":2: unknown key 'nosuch' in \[episode\]"),
    ("[nosuch]\n", r":1: unknown section"),
    ("t_sim = 1\n", r":1: key 't_sim' outside of any section"),
    ("[episode]\nt_sim 1\n", r":2: expected 'key = value'"),
    ("[episode]\nt_sim = abc\n", r":2: bad value for episode.t_sim"),
    ("[episode]\nt_sim = 1\nt_sim = 2\n", r":3: duplicate key"),
    ("[controller]\nlower_bounds = 1, 2\n", r":2: bad value for controller.lower_bounds"),
    ("[sweep]\nseed_speed = 0.45\n", r"invalid \[sweep\] block"),
    ("[episode]\nt_sim = nan\n", r"not finite"),
])
def test_errors_carry_location(text, pattern):
    with pytest.raises(ConfigError, match=pattern):
        config.loads(text, "c.ini")


def test_dump_is_canonical_and_round_trips():
    cfg = config.loads("[episode]\nt_sim = 2.5\n[sweep]\ngrid = 0.3, 0.4\n[run]\nseed = 9\n")
    text = config.dumps(cfg)
    assert config.loads(text) == cfg
    assert config.dumps(config.loads(text)) == text
    assert config.loads(config.dumps(config.default_config())) == config.default_config()


def test_load_reads_files(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text("[run]\nseed = 4\n")
    assert config.load(p).seed == 4
    with pytest.raises(ConfigError, match="cannot read config"):
        config.load(tmp_path / "missing.ini")


def test_plan_reflects_config():
    cfg = config.loads("[cma]\nbudget = 32\nsigma = 0.1\n[run]\nseed = 3\n")
    plan = cfg.plan()
    assert (plan.budget, plan.sigma, plan.master_seed) == (32, 0.1, 3)
    assert plan.seed_gains == cfg.seed_gains
