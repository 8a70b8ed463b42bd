import pytest

from narmsr.config import (
    SCHEMA,
    ConfigError,
    apply_settings,
    config_to_dict,
    config_to_text,
    load_config,
    parse_config_text,
)
from narmsr.narm import EmbeddingWeights, write_embedding
from narmsr.solver import SolverConfig


def test_schema_covers_every_dict_key():
    assert set(config_to_dict(SolverConfig())) | {"embedding_file"} == set(SCHEMA)


def test_text_roundtrip():
    cfg = SolverConfig(mu=0.7, delta=0.05, eq19_printed_sign=True, stages=2)
    text = config_to_text(cfg)
    assert "delta_prime = auto" in text and "eq19_printed_sign = true" in text
    assert apply_settings(SolverConfig(), parse_config_text(text)) == cfg


def test_comments_and_blank_lines(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# header\n\nmode = dpdnn   # trailing\nneighbors = 6\ndenoiser = gaussian\n")
    cfg = load_config(path)
    assert cfg.mode == "dpdnn" and cfg.narm.J == 6 and cfg.denoiser.kind == "gaussian"


def test_unknown_and_malformed_keys_are_listed():
    with pytest.raises(ConfigError) as info:
        parse_config_text("bogus = 1\njust words\nmu = 0.1\n")
    assert info.value.keys == ["bogus", "line 2"]


@pytest.mark.parametrize("settings, key", [
    ({"mu": "abc"}, "mu"),
    ({"eq19_printed_sign": "maybe"}, "eq19_printed_sign"),
    ({"patch_size": "4"}, "patch_size"),
    ({"denoiser": "bm3d"}, "denoiser"),
    ({"mode": "fast"}, "mode"),
    ({"init_alignment": "left"}, "init_alignment"),
])
def test_bad_values_name_the_key(settings, key):
    with pytest.raises(ConfigError) as info:
        apply_settings(SolverConfig(), settings)
    assert info.value.keys == [key]


def test_typed_values_pass_through():
    cfg = apply_settings(SolverConfig(), {"stages": 7, "delta": None, "gamma_reg": 0.5})
    assert cfg.stages == 7 and cfg.delta is None and cfg.narm.gamma_reg == 0.5


def test_embedding_file(tmp_path):
    path = tmp_path / "emb.txt"
    write_embedding(path, EmbeddingWeights.default())
    cfg = apply_settings(SolverConfig(), {"embedding_file": str(path), "narm_backend": "attention"})
    assert cfg.embedding is not None and cfg.narm_backend == "attention"
    with pytest.raises(ConfigError) as info:
        apply_settings(SolverConfig(), {"embedding_file": str(tmp_path / "none.txt")})
    assert info.value.keys == ["embedding_file"]
