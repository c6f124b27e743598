import pytest

from pointprops import config


class TestPropertyConfig:
    def test_defaults_and_derived_weight(self):
        cfg = config.PropertyConfig()
        assert cfg.neg_weight == pytest.approx(10.0 / cfg.n_max)
        assert cfg.margin_max == pytest.approx(cfg.m_p - cfg.neg_weight * cfg.m_n)

    def test_rejects_bad_bounds(self):
        with pytest.raises(ValueError):
            config.PropertyConfig(n_min=30, n_max=30)
        with pytest.raises(ValueError):
            config.PropertyConfig(n_min=40, n_max=30)

    def test_rejects_bad_margins(self):
        with pytest.raises(ValueError):
            config.PropertyConfig(m_p=0.2, m_n=0.2)
        with pytest.raises(ValueError):
            config.PropertyConfig(m_p=0.1, m_n=0.5)

    def test_rejects_bad_radius_and_alpha(self):
        with pytest.raises(ValueError):
            config.PropertyConfig(rad=0)
        with pytest.raises(ValueError):
            config.PropertyConfig(alpha=0.0)


class TestTrainConfig:
    def test_rejects_too_few_transforms(self):
        with pytest.raises(ValueError):
            config.TrainConfig(transforms_per_scene=1)

    def test_rejects_bad_image_size(self):
        with pytest.raises(ValueError):
            config.TrainConfig(image_size=(30, 64))

    def test_rejects_unknown_level(self):
        with pytest.raises(ValueError):
            config.TrainConfig(illumination="illum_whatever")


class TestConfigFile:
    def test_parse_and_build(self):
        text = """
        [train]
        iterations = 7
        seed = 5
        # a comment
        [properties]
        rad = 3
        n_min = 4
        n_max = 20

        [simulate]
        viewpoint = viewpoint_full
        [eval]
        epsilon = 2.5
        """
        run = config.build_run_config(config.parse_config_text(text))
        assert run.train.iterations == 7
        assert run.train.seed == 5
        assert run.train.properties.rad == 3
        assert run.train.properties.n_max == 20
        assert run.train.viewpoint == "viewpoint_full"
        assert run.eval.epsilon == 2.5

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            config.parse_config_text("[train]\nlearning_speed = 3\n")

    def test_malformed_line_rejected(self):
        with pytest.raises(ValueError, match="expected"):
            config.parse_config_text("[train]\niterations 7\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ValueError, match="bad value"):
            config.parse_config_text("[train]\niterations = soon\n")

    def test_invalid_combination_rejected_before_work(self):
        values = config.parse_config_text("[properties]\nn_min = 50\nn_max = 20\n")
        with pytest.raises(ValueError):
            config.build_run_config(values)

    def test_seed_and_threads_overrides(self):
        run = config.build_run_config({}, seed=123, threads=4)
        assert run.train.seed == 123
        assert run.threads == 4

    def test_presets(self):
        for name, d, illum, view in [
            ("pn-i", 64, "illum_full", "viewpoint_medium"),
            ("pn-v", 64, "illum_mild", "viewpoint_full"),
            ("pn-full", 128, "illum_full", "viewpoint_full"),
        ]:
            run = config.build_run_config({}, preset=name)
            assert run.train.descriptor_dim == d
            assert run.train.illumination == illum
            assert run.train.viewpoint == view

    def test_explicit_keys_beat_preset(self):
        values = config.parse_config_text("[train]\ndescriptor_dim = 16\n")
        run = config.build_run_config(values, preset="pn-full")
        assert run.train.descriptor_dim == 16
        assert run.train.illumination == "illum_full"

    def test_unknown_preset(self):
        with pytest.raises(ValueError, match="preset"):
            config.build_run_config({}, preset="pn-x")
