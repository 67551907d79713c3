"""
Unit tests for the configuration manager and the package logger
"""

import json
import logging
import os
import shutil
import tempfile
import unittest

from poincare_align.config import DEFAULT_CONFIG_FILE, MANIFEST_FORMAT, Config
from poincare_align.exceptions import ConfigError
from poincare_align.logger import LOGGER_NAME, Logger


class TestConfig(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.config_file = os.path.join(self.temp_dir, "test_config.json")
        self.config = Config(self.config_file)

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_default_config(self):
        """Test that default configuration is loaded correctly."""
        self.assertTrue(self.config.is_logging_enabled())
        self.assertTrue(self.config.is_synthetic())
        self.assertEqual(self.config.get("model.geometry"), "poincare")
        self.assertEqual(self.config.get("model.dim"), 64)
        self.assertEqual(self.config.get("training.negatives_per_positive"), 6)
        self.assertEqual(self.config.get("training.margin_visual"), 1.5)
        self.config.validate()

    def test_set_get_config(self):
        """Test setting and getting dotted configuration keys."""
        self.config.set("training.epochs", 12)
        self.assertEqual(self.config.get("training.epochs"), 12)
        self.assertIsNone(self.config.get("training.missing"))
        self.assertEqual(self.config.get("nope.nothing", "fallback"), "fallback")

        self.config.set("output_directory", "/tmp/test")
        self.assertEqual(self.config.get_output_directory(), "/tmp/test")

        with self.assertRaises(ConfigError):
            self.config.set("rng_seed.inner", 1)

    def test_save_load_config(self):
        """Test saving and loading configuration."""
        self.config.set("model.geometry", "euclidean")
        self.config.set("logging_enabled", False)
        with open(self.config_file, "w", encoding="utf-8") as f:
            json.dump(self.config.config, f)

        new_config = Config(self.config_file)
        self.assertEqual(new_config.get("model.geometry"), "euclidean")
        self.assertFalse(new_config.is_logging_enabled())
        self.assertEqual(new_config.get("training.epochs"), 300)

    def test_overrides(self):
        self.config.apply_overrides(
            ["training.epochs=5", "model.geometry=euclidean", "evaluation.k_list=[1, 5]", "model.hidden_dim=16"]
        )
        self.assertEqual(self.config.get("training.epochs"), 5)
        self.assertEqual(self.config.get("model.geometry"), "euclidean")
        self.assertEqual(self.config.get("evaluation.k_list"), [1, 5])
        self.assertEqual(self.config.get("model.hidden_dim"), 16)

    def test_unknown_override_names_the_key(self):
        with self.assertRaises(ConfigError) as ctx:
            self.config.apply_overrides(["training.epoch=5"])
        self.assertEqual(ctx.exception.field, "training.epoch")
        with self.assertRaises(ConfigError):
            self.config.apply_overrides(["no_equals_sign"])

    def test_validate_names_the_field(self):
        cases = [
            ("training.epochs", 0),
            ("dataset.split_fraction", 1.0),
            ("model.geometry", "hyperbolic"),
            ("model.curvature", -1.0),
            ("evaluation.k_list", [0]),
            ("evaluation.beta_list", [1.5]),
            ("model.curvatures", [1.0, 1.0]),
        ]
        for key, value in cases:
            config = Config(self.config_file)
            config.set(key, value)
            with self.assertRaises(ConfigError) as ctx:
                config.validate()
            self.assertEqual(ctx.exception.field, key)
            self.assertIn(key, str(ctx.exception))

    def test_dataset_directory_required_without_synthetic(self):
        self.config.set("synthetic.enabled", False)
        with self.assertRaises(ConfigError) as ctx:
            self.config.validate()
        self.assertEqual(ctx.exception.field, "dataset.directory")

        self.config.set("dataset.directory", os.path.join(self.temp_dir, "absent"))
        with self.assertRaises(ConfigError) as ctx:
            self.config.validate()
        self.assertIn("absent", str(ctx.exception))

    def test_invalid_synthetic_settings(self):
        self.config.set("synthetic.edge_noise", 2.0)
        with self.assertRaises(ConfigError) as ctx:
            self.config.validate()
        self.assertEqual(ctx.exception.field, "synthetic")

    def test_layer_views(self):
        self.assertEqual(self.config.layer_dims(32), [32, 64, 64])
        self.assertEqual(self.config.layer_curvatures(), [1.0, 1.0, 1.0])
        self.config.set("model.hidden_dim", 16)
        self.config.set("model.layers", 3)
        self.config.set("model.fusion_curvature", 2.0)
        self.assertEqual(self.config.layer_dims(8), [8, 16, 16, 64])
        self.assertEqual(self.config.layer_curvatures(), [1.0, 1.0, 1.0, 2.0])

    def test_training_config_view(self):
        self.config.set("rng_seed", 7)
        cfg = self.config.training_config()
        self.assertEqual(cfg.rng_seed, 7)
        self.assertEqual(cfg.margin_struct, 0.5)
        self.assertEqual(cfg.learning_rate, 0.01)
        self.assertEqual(cfg.epochs, 300)

    def test_manifest_restores_config(self):
        manifest = os.path.join(self.temp_dir, "manifest.json")
        with open(manifest, "w", encoding="utf-8") as f:
            json.dump({"format": MANIFEST_FORMAT, "config": {"training": {"epochs": 7}}}, f)
        self.assertTrue(self.config.load_config_from(manifest))
        self.assertEqual(self.config.get("training.epochs"), 7)
        self.assertEqual(self.config.get("training.learning_rate"), 0.01)
        self.assertFalse(self.config.load_config_from(os.path.join(self.temp_dir, "absent.json")))

    def test_broken_config_file(self):
        broken = os.path.join(self.temp_dir, "broken.json")
        with open(broken, "w", encoding="utf-8") as f:
            f.write("{not json")
        with self.assertRaises(ConfigError):
            self.config.load_config_from(broken)

    def test_fusion_config_view(self):
        fusion = self.config.fusion_config()
        self.assertEqual(fusion.beta, 0.9)
        self.assertEqual(fusion.fusion_curvature.c, 1.0)
        self.assertEqual(self.config.fusion_config(1.0).beta, 1.0)
        self.config.set("model.fusion_curvature", 2.0)
        self.assertEqual(self.config.fusion_config(0.5).fusion_curvature.c, 2.0)
        with self.assertRaises(ConfigError) as ctx:
            self.config.fusion_config(1.5)
        self.assertEqual(ctx.exception.field, "evaluation.beta")

    def test_tie_seeds_must_be_boolean(self):
        self.assertTrue(self.config.get("model.tie_seeds"))
        self.config.set("model.tie_seeds", "yes")
        with self.assertRaises(ConfigError) as ctx:
            self.config.validate()
        self.assertEqual(ctx.exception.field, "model.tie_seeds")


class TestPresets(unittest.TestCase):
    """Every shipped preset is complete: nothing falls back to the built-in defaults."""

    PRESET_DIR = os.path.dirname(os.path.abspath(DEFAULT_CONFIG_FILE))

    def _preset(self, name):
        return Config(os.path.join(self.PRESET_DIR, name))

    def _flatten(self, node, prefix=""):
        keys = set()
        for key, value in node.items():
            path = f"{prefix}{key}"
            keys.add(path)
            if isinstance(value, dict):
                keys |= self._flatten(value, path + ".")
        return keys

    def test_presets_are_complete_and_valid(self):
        defaults = self._flatten(Config(os.path.join(self.PRESET_DIR, "absent.json")).config)
        names = sorted(f for f in os.listdir(self.PRESET_DIR) if f.endswith(".json"))
        self.assertIn("config.json", names)
        for name in names:
            with open(os.path.join(self.PRESET_DIR, name), encoding="utf-8") as f:
                self.assertEqual(self._flatten(json.load(f)), defaults, name)
            self._preset(name).validate()

    def test_noisy_preset_keeps_benchmark_settings(self):
        config = self._preset("config_noisy.json")
        self.assertEqual(config.get("model.dim"), 32)
        self.assertEqual(config.get("synthetic.edge_noise"), 0.1)
        self.assertEqual(config.get("gradcheck.n_entities"), 15)

    def test_euclidean_preset(self):
        config = self._preset("config_euclidean.json")
        self.assertEqual(config.get("model.geometry"), "euclidean")
        self.assertEqual(config.get("model.dim"), 32)

    def test_seed_fraction_presets(self):
        for percent in (20, 50, 80):
            config = self._preset(f"config_seeds{percent}.json")
            self.assertAlmostEqual(config.get("dataset.split_fraction"), percent / 100)
            self.assertEqual(config.get("model.dim"), 32)


class TestLogger(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.log_file = os.path.join(self.temp_dir, "test.log")
        self.logger = Logger(self.log_file, enabled=True, console=False)

    def tearDown(self):
        self.logger.close()
        shutil.rmtree(self.temp_dir)

    def _content(self):
        with open(self.log_file, 'r', encoding='utf-8') as f:
            return f.read()

    def test_logger_enabled(self):
        """Test that logging works when enabled."""
        self.logger.info("Test message")
        self.logger.error("Error message")
        self.assertTrue(os.path.exists(self.log_file))
        content = self._content()
        self.assertIn("Test message", content)
        self.assertIn("Error message", content)

    def test_module_loggers_reach_the_file(self):
        logging.getLogger(f"{LOGGER_NAME}.train").info("epoch 0 loss 1.0")
        self.assertIn("epoch 0 loss 1.0", self._content())

    def test_logger_disabled(self):
        """Test that logging is disabled when configured."""
        other = os.path.join(self.temp_dir, "other.log")
        disabled_logger = Logger(other, enabled=False)
        disabled_logger.info("This should not be logged")
        self.assertFalse(os.path.exists(other))

    def test_toggle_logging(self):
        """Test toggling logging on and off."""
        self.logger.set_enabled(False)
        self.logger.info("This should not be logged")

        self.logger.set_enabled(True)
        self.logger.info("This should be logged")

        content = self._content()
        self.assertIn("This should be logged", content)
        self.assertNotIn("This should not be logged", content)

    def test_new_logger_replaces_handlers(self):
        second_file = os.path.join(self.temp_dir, "second.log")
        second = Logger(second_file, enabled=True, console=False)
        try:
            second.info("only in the second file")
            self.assertEqual(len(logging.getLogger(LOGGER_NAME).handlers), 1)
            self.assertNotIn("only in the second file", self._content())
        finally:
            second.close()


if __name__ == '__main__':
    unittest.main()
