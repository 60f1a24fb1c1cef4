import json

import pytest

from semsplat.config import PipelineConfig, config_from_dict, load_config
from semsplat.errors import SchemaViolation


def test_full_default_emission(tmp_path):
    cfg = PipelineConfig()
    path = str(tmp_path / "cfg.json")
    cfg.save(path)
    with open(path) as fh:
        data = json.load(fh)
    # every top-level section and every leaf present with a value
    assert set(data) == {"seed", "threads", "synth", "masks", "ccl",
                         "field_train", "query"}
    assert data["ccl"]["lambda_pull"] == 0.25
    assert data["ccl"]["margin"] == 0.7
    assert data["field_train"]["iterations"] == 30000
    assert data["field_train"]["learning_rate"] == 0.001
    assert data["field_train"]["adam_betas"] == [0.9, 0.999]
    back = load_config(path)
    assert back.hash() == cfg.hash()


def test_unknown_keys_rejected():
    with pytest.raises(SchemaViolation):
        config_from_dict({"seed": 1, "bogus": 2})
    with pytest.raises(SchemaViolation):
        config_from_dict({"ccl": {"lambda_pulls": 0.5}})


def test_hash_changes_iff_any_parameter_changes():
    a = PipelineConfig()
    b = PipelineConfig()
    assert a.hash() == b.hash()
    b.ccl.margin = 0.71
    assert a.hash() != b.hash()
    c = PipelineConfig()
    c.synth.resolution = 65
    assert a.hash() != c.hash()
    d = PipelineConfig()
    d.seed = 1
    assert a.hash() != d.hash()
