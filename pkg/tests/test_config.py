from __future__ import annotations

import json

import pytest

from pagefl.config import (
    ConfigError,
    ExperimentConfig,
    config_from_dict,
    load_config,
)


class TestDefaults:
    def test_minimal_config_fills_defaults(self):
        cfg = config_from_dict({"algorithm": "fedavg"})
        assert cfg.algorithm == "fedavg"
        assert cfg == ExperimentConfig(algorithm="fedavg")
        assert cfg.local.epochs == 5 and cfg.local.learning_rate == 0.05
        assert cfg.bounds.alpha == [1, 10] and cfg.bounds.eta == [1e-4, 0.5]

    def test_empty_object(self):
        assert config_from_dict({}) == ExperimentConfig()

    @pytest.mark.parametrize("algo,mu", [("page", 0.0), ("fedavg", 0.0), ("fedprox", 0.01)])
    def test_prox_mu_default(self, algo, mu):
        assert config_from_dict({"algorithm": algo}).prox_mu == mu

    def test_prox_mu_explicit(self):
        cfg = config_from_dict({"algorithm": "fedprox", "local": {"prox_mu": 0.5}})
        assert cfg.prox_mu == 0.5


class TestRejects:
    def test_inverted_alpha_bounds_names_field(self):
        with pytest.raises(ConfigError) as exc:
            config_from_dict({"bounds": {"alpha": [5, 2]}})
        assert exc.value.path == "bounds.alpha"
        assert "bounds.alpha" in str(exc.value)

    @pytest.mark.parametrize("raw,path", [
        ({"colour": 1}, "colour"),
        ({"local": {"epoch": 3}}, "local.epoch"),
        ({"server_agent": {"beta": 0.0}}, "server_agent.beta"),
        ({"num_clients": 0}, "num_clients"),
        ({"algorithm": "fedsgd"}, "algorithm"),
        ({"rounds": "ten"}, "rounds"),
        ({"rounds": 2.5}, "rounds"),
        ({"checkpoint": 1}, "checkpoint"),
    ])
    def test_bad_fields(self, raw, path):
        with pytest.raises(ConfigError) as exc:
            config_from_dict(raw)
        assert exc.value.path == path

    def test_top_level_must_be_object(self):
        with pytest.raises(ConfigError):
            config_from_dict([1, 2])

    def test_invalid_json_file(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(p)


class TestRoundTrip:
    def test_dict_roundtrip(self):
        cfg = config_from_dict({
            "algorithm": "page", "num_clients": 7, "seed": 3,
            "data": {"partition": {"scheme": "lognormal", "sigma": 0.5}},
            "server_agent": {"hidden": [16], "beta": 0.05},
            "freeze": {"alpha": 3, "eta": 0.1},
        })
        assert config_from_dict(json.loads(cfg.to_json())) == cfg

    def test_file_roundtrip(self, tmp_path):
        cfg = ExperimentConfig(rounds=12, kappa_g=10.0)
        p = tmp_path / "c.json"
        p.write_text(cfg.to_json())
        assert load_config(p) == cfg

    def test_digest_tracks_content(self):
        a, b = ExperimentConfig(), ExperimentConfig(seed=1)
        assert a.digest() == ExperimentConfig().digest()
        assert a.digest() != b.digest()

    def test_replace_validates(self):
        with pytest.raises(ConfigError):
            ExperimentConfig().replace(rounds=0)
