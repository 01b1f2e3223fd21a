from fractions import Fraction

import pytest

from cliquechain.adversary import STRATEGIES
from cliquechain.config import bundled, from_dict, load, load_bundled, resolve
from cliquechain.model import ConfigError


def test_bundled_scenarios_cover_every_strategy():
    names = bundled()
    assert len(names) >= 8
    cfgs = [load_bundled(n) for n in names]
    assert {c.strategy for c in cfgs} == set(STRATEGIES)
    assert any(c.partitions for c in cfgs)


def test_schema_errors_name_the_key():
    with pytest.raises(ConfigError, match="periods"):
        from_dict({"name": "x"})
    with pytest.raises(ConfigError, match=r"protocol\.threads"):
        from_dict({"name": "x", "periods": 3, "protocol": {"threads": "four"}})
    with pytest.raises(ConfigError, match="bogus"):
        from_dict({"name": "x", "periods": 3, "bogus": 1})


def test_semantic_errors():
    with pytest.raises(ConfigError, match="power of two"):
        from_dict({"name": "x", "periods": 3, "protocol": {"threads": 3, "t0_ms": 300}})
    with pytest.raises(ConfigError, match="threshold"):
        from_dict({"name": "x", "periods": 3, "protocol": {"endorsers": 4, "threshold": 5}})
    with pytest.raises(ConfigError, match="stake_share"):
        from_dict({"name": "x", "periods": 3, "adversary": {"strategy": "withholder"}})
    with pytest.raises(ConfigError, match="unknown node"):
        from_dict({"name": "x", "periods": 3,
                   "network": {"partitions": [{"start_period": 1, "end_period": 2, "side": ["zz"]}]}})


def test_share_parsing():
    cfg = from_dict({"name": "x", "periods": 3, "adversary": {"strategy": "withholder", "stake_share": "1/3"}})
    assert cfg.stake_share == Fraction(1, 3)
    cfg = from_dict({"name": "x", "periods": 3, "adversary": {"strategy": "withholder", "stake_share": 0.25}})
    assert cfg.stake_share == Fraction(1, 4)


def test_load_from_path_and_name(tmp_path):
    p = tmp_path / "mine.toml"
    p.write_text('name = "mine"\nperiods = 5\n[protocol]\nthreads = 2\n')
    assert load(p).name == "mine"
    assert resolve(str(p)).params.threads == 2
    assert resolve("canonical").name == "canonical"
    with pytest.raises(ConfigError):
        resolve("no_such_scenario")
    bad = tmp_path / "bad.toml"
    bad.write_text("name = \n")
    with pytest.raises(ConfigError):
        load(bad)


def test_with_revalidates():
    cfg = load_bundled("canonical")
    assert cfg.with_(protocol={"delta_f": 9}).params.delta_f == 9
    assert cfg.with_(protocol={"delta_f": 9}).params.threads == cfg.params.threads
    with pytest.raises(ConfigError):
        cfg.with_(protocol={"threshold": 100})
