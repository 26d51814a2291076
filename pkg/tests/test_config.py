import pytest

from stochdelay.config import HypothesisError, SchemaError, default_config, from_dict, parse_config


def test_minimal_transport_config_is_populated():
    cfg = from_dict({"scenario": "transport"})
    assert cfg.p == 2 and cfg.q == 2
    assert cfg.params.mu == 0.5
    assert cfg.problem().n == int(round(1 / cfg.dt)) + 1


def test_contraction_condition_is_named():
    with pytest.raises(HypothesisError, match=r"w <= sup\|b_mu\|"):
        from_dict({"scenario": "mckendrick", "params": {"w": 0.2}})


def test_unknown_scenario_lists_valid_names():
    with pytest.raises(SchemaError, match="finite_dim, mckendrick, transport"):
        from_dict({"scenario": "heat"})


def test_unknown_keys_are_rejected():
    with pytest.raises(SchemaError, match="unknown"):
        from_dict({"scenario": "transport", "dtt": 0.1})
    with pytest.raises(SchemaError, match="params"):
        from_dict({"scenario": "transport", "params": {"nu": 1}})


def test_understated_lipschitz_constant_is_caught():
    with pytest.raises(HypothesisError, match="Lipschitz"):
        from_dict({"scenario": "transport", "params": {"f1": {"expr": "2*sin(y)", "lipschitz": 1.0}}})
    with pytest.raises(HypothesisError, match="declared"):
        from_dict({"scenario": "transport", "params": {"f1": {"expr": "sin(y)"}}})


def test_hypothesis_checks():
    with pytest.raises(SchemaError, match="1/dt"):
        default_config("transport", dt=0.3)
    with pytest.raises(HypothesisError, match="alpha"):
        default_config("transport", alpha=0.5)
    with pytest.raises(HypothesisError, match="p and q"):
        default_config("transport", q=0.5)
    with pytest.raises(HypothesisError, match="truncation"):
        default_config("mckendrick", params={"mu": "0.01 + 0*a", "b": "0*a"})


def test_yaml_round_trip(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("scenario: finite_dim\nseed: 4\nparams:\n  matrix: [[-2.0]]\nverify: {n_paths: 2}\n")
    cfg = parse_config(f)
    assert cfg.seed == 4 and cfg.params.matrix == [[-2.0]] and cfg.verify.n_paths == 2
    assert cfg.digest() == parse_config(f).digest()
    with pytest.raises(SchemaError):
        parse_config(tmp_path / "missing.yaml")
