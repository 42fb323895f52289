import json

import pytest

from narx.config import SEED_ENV, ConfigError, RunConfig


def write(tmp_path, doc):
    p = tmp_path / "run.json"
    p.write_text(json.dumps(doc))
    return p


def test_defaults_follow_recipes():
    cfg = RunConfig.load(None, env={})
    assert (cfg.stage1.epochs, cfg.stage1.batch_size, cfg.stage1.learning_rate) == (5, 256, 1e-2)
    assert (cfg.stage2.epochs, cfg.stage2.batch_size, cfg.stage2.learning_rate, cfg.stage2.dropout) == (15, 512, 1e-3, 0.1)
    assert cfg.stage1.embed_dim == cfg.stage2.embed_dim == 64
    assert cfg.cutoffs == (20, 50, 100) and cfg.seed == 0


def test_every_stage_field_is_settable(tmp_path):
    stage = {"epochs": 2, "batch_size": 8, "learning_rate": 0.5, "layers": 2, "embed_dim": 16, "dropout": 0.2,
             "temperature": 0.3, "negatives_per_anchor": 3, "positives_per_anchor": 2, "seed": 11}
    cfg = RunConfig.load(write(tmp_path, {"stage1": stage, "stage2": stage, "mining": {"steps": 1, "hop": 2}}), env={})
    assert cfg.to_dict()["stage1"] == stage and cfg.to_dict()["stage2"] == stage
    assert cfg.mining.steps == 1 and cfg.mining.hop == 2


def test_roundtrip_through_dict():
    cfg = RunConfig.load(None, env={}).with_seed(4)
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))).to_dict() == cfg.to_dict()


def test_seed_precedence(tmp_path):
    path = write(tmp_path, {"seed": 3})
    assert RunConfig.load(path, env={}).stage1.seed == 3
    cfg = RunConfig.load(path, env={SEED_ENV: "8"})
    assert cfg.seed == cfg.stage1.seed == cfg.stage2.seed == 8
    with pytest.raises(ConfigError):
        RunConfig.load(path, env={SEED_ENV: "eight"})


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"stage1": {"epochs": 0}},
    {"stage2": {"unknown_knob": 1}},
    {"paths": {"nowhere": "x"}},
    {"cutoffs": [0]},
    {"workers": 0},
    {"mining": {"min_freq": 1}},
    {"mining": {"scope": "galaxy"}},
    [1, 2],
])
def test_bad_documents_are_config_errors(tmp_path, doc):
    with pytest.raises(ConfigError):
        RunConfig.load(write(tmp_path, doc), env={})


def test_unreadable_and_malformed(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "missing.json", env={})
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "bad.json", env={})
