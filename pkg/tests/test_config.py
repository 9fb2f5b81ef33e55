import json

import numpy as np
import pytest

from nvfluidics.config import (
    ConfigError,
    ExperimentConfig,
    config_from_dict,
    config_to_dict,
    dump_config,
    load_config,
)


def test_defaults_round_trip_through_json(tmp_path):
    cfg = ExperimentConfig()
    path = tmp_path / "cfg.json"
    path.write_text(dump_config(cfg))
    again = load_config(path)
    assert config_to_dict(again) == config_to_dict(cfg)


def test_partial_override_keeps_other_defaults():
    cfg = config_from_dict({"seed": 7, "world": {"coil": {"current": 0.03}}, "odmr": {"dwell_per_point": 2.0}})
    assert cfg.seed == 7
    assert cfg.world.coil.current == pytest.approx(0.03)
    assert cfg.odmr.dwell_per_point == 2.0
    assert cfg.controller == ExperimentConfig().controller


def test_unknown_key_reports_dotted_path():
    with pytest.raises(ConfigError, match=r"world\.coil\.curent"):
        config_from_dict({"world": {"coil": {"curent": 0.05}}})


@pytest.mark.parametrize("data, fragment", [
    ({"seed": -1}, "seed"),
    ({"seed": 2**64}, "seed"),
    ({"seed": 1.5}, "seed: expected an integer"),
    ({"seed": True}, "seed: expected an integer"),
    ({"odmr": {"dwell_per_point": "long"}}, "odmr.dwell_per_point: expected a finite number"),
    ({"recipes": {"hold": {"duration": 0}}}, "recipes.hold: duration must be > 0"),
    ({"recipes": {"esr": {"offset": [1e-6]}}}, "recipes.esr.offset: expected shape"),
    ({"world": None}, "world: expected an object"),
    ({"odmr": {"dwell_per_point": None}}, "null is not allowed"),
])
def test_invalid_values_are_rejected_with_section(data, fragment):
    with pytest.raises(ConfigError, match=fragment.replace(".", r"\.")):
        config_from_dict(data)


def test_nullable_fields_accept_null():
    cfg = config_from_dict({"output_dir": None, "world": {"particle": {"field_moment": None}}})
    assert cfg.output_dir is None
    assert cfg.world.particle.field_moment is None


def test_max_seed_accepted():
    assert config_from_dict({"seed": 2**64 - 1}).seed == 2**64 - 1


def test_scan_offsets_parsed_as_vectors():
    cfg = config_from_dict({"scan": {"offsets": [[1e-6, 0.0], [0.0, 2e-6], [3e-6, 0], [0, 4e-6]]}})
    assert all(isinstance(o, np.ndarray) and o.shape == (2,) for o in cfg.scan.offsets)


def test_bad_json_and_missing_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json")


def test_dump_is_plain_json():
    data = json.loads(dump_config(ExperimentConfig()))
    assert set(data) == {"world", "controller", "odmr", "scan", "recipes", "seed", "output_dir"}
