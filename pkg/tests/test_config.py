"""Config parsing, validation, canonical hashing, lr schedule."""

import pytest

from camseg.config import (TrainConfig, canonical_text, config_hash,
                           load_config, parse_config_text)
from camseg.errors import ConfigError


class TestParsing:
    def test_defaults_are_valid(self):
        cfg = TrainConfig()
        cfg.validate()
        assert cfg.lr == 1e-4 and cfg.lr_decay == 0.7 and cfg.decay_every_epochs == 10

    def test_overrides_and_comments(self):
        cfg = parse_config_text(
            "# experiment\n"
            "train.lr = 0.001   # bumped for desk scale\n"
            "fold_index = 2\n"
            "backbone.stage_channels = 8,16,32\n"
            "\n"
            "k = 5\n")
        assert cfg.lr == 0.001 and cfg.fold_index == 2 and cfg.k == 5
        assert cfg.stage_channels == (8, 16, 32)

    def test_unknown_key_rejected_with_line(self):
        with pytest.raises(ConfigError, match="line 2.*unknown"):
            parse_config_text("train.lr = 0.1\ntrain.bogus = 3\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="bad value"):
            parse_config_text("train.lr = fast\n")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config_text("train.lr 0.1\n")

    @pytest.mark.parametrize("text", [
        "train.lr = -1.0",
        "train.lr_decay = 0.0",
        "train.lr_decay = 1.5",
        "fold_index = 4",
        "k = 0",
        "data.image_size = 60",
        "backbone.frozen_stages = 9",
    ])
    def test_invariant_violations_rejected(self, text):
        with pytest.raises(ConfigError):
            parse_config_text(text)

    def test_load_config_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(str(tmp_path / "nope.cfg"))


class TestCanonicalForm:
    def test_canonical_text_roundtrips(self):
        cfg = TrainConfig(lr=0.002, fold_index=3, stage_channels=(8, 16, 32))
        back = parse_config_text(canonical_text(cfg))
        assert back == cfg

    def test_hash_stable_and_sensitive(self):
        a = TrainConfig()
        b = TrainConfig()
        assert config_hash(a) == config_hash(b)
        b.lr = 2e-4
        assert config_hash(a) != config_hash(b)


class TestLrSchedule:
    def test_exact_decay_points(self):
        cfg = TrainConfig()
        assert cfg.lr_at(0) == 1e-4
        assert cfg.lr_at(9) == 1e-4
        assert cfg.lr_at(10) == 1e-4 * 0.7
        assert cfg.lr_at(19) == 1e-4 * 0.7
        assert cfg.lr_at(20) == 1e-4 * 0.7 ** 2

    def test_decimal_reference_values(self):
        cfg = TrainConfig()
        assert cfg.lr_at(10) == pytest.approx(0.7e-4, rel=1e-12)
        assert cfg.lr_at(20) == pytest.approx(0.49e-4, rel=1e-12)

    def test_formula_for_arbitrary_epochs(self):
        cfg = TrainConfig(lr=3e-3, lr_decay=0.5, decay_every_epochs=4)
        for epoch in range(0, 25):
            assert cfg.lr_at(epoch) == 3e-3 * 0.5 ** (epoch // 4)
