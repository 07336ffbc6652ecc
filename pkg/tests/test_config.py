import json
import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

from src.config import CONFIG_SCHEMA, DEFAULT_CONFIG, load_config, validate_config, write_schema
from src.errors import ConfigError
from src.models.glmm import PriorSet
from src.models.sampler import SamplerConfig

CLEAN_ENV = {name: value for name, value in os.environ.items() if not name.startswith('COOPNET_')}


@patch.dict(os.environ, CLEAN_ENV, clear=True)
@patch('src.config.load_dotenv', lambda *args, **kwargs: False)
class TestLoadConfig(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, payload):
        path = self.dir / 'config.json'
        path.write_text(json.dumps(payload), encoding='utf-8')
        return path

    def test_defaults(self):
        config = load_config()
        self.assertEqual(config, DEFAULT_CONFIG)
        self.assertEqual(SamplerConfig.from_config(config), SamplerConfig())
        self.assertEqual(PriorSet.from_config(config), PriorSet())

    def test_precedence(self):
        """Test file values beat the environment and explicit overrides beat both"""
        path = self.write({'seed': 5, 'chains': 2, 'draws': 300})
        with patch.dict(os.environ, {'COOPNET_SEED': '9', 'COOPNET_WARMUP': '250'}):
            config = load_config(path, {'draws': 50, 'chains': None})
        self.assertEqual(config['seed'], 5)
        self.assertEqual(config['warmup'], 250)
        self.assertEqual(config['chains'], 2)
        self.assertEqual(config['draws'], 50)

    def test_env_seed(self):
        with patch.dict(os.environ, {'COOPNET_SEED': '123'}):
            self.assertEqual(load_config()['seed'], 123)

    def test_unknown_key(self):
        with self.assertRaises(ConfigError):
            load_config(self.write({'chain': 4}))

    def test_out_of_range(self):
        for payload in ({'chains': 0}, {'level': 1.0}, {'target_acceptance': 0}, {'prior_beta_scale': -1}):
            with self.assertRaises(ConfigError):
                load_config(self.write(payload))

    def test_not_json(self):
        path = self.dir / 'config.json'
        path.write_text('{seed: 1', encoding='utf-8')
        with self.assertRaises(ConfigError):
            load_config(path)

    def test_village_mean_order(self):
        with self.assertRaises(ConfigError):
            load_config(self.write({'village_mean_low': 0.5, 'village_mean_high': 0.3}))


class TestValidateConfig(unittest.TestCase):
    def test_coercion(self):
        checked = validate_config({'chains': '3', 'level': '0.95', 'progress': 'yes'})
        self.assertEqual(checked, {'chains': 3, 'level': 0.95, 'progress': True})

    def test_fractional_integer(self):
        with self.assertRaises(ConfigError):
            validate_config({'draws': 10.5})

    def test_schema_covers_defaults(self):
        self.assertEqual(set(CONFIG_SCHEMA['properties']), set(DEFAULT_CONFIG))

    def test_write_schema(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_schema(Path(tmp) / 'schema.json')
            self.assertEqual(json.loads(path.read_text(encoding='utf-8'))['title'], 'coopnet configuration')


if __name__ == '__main__':
    unittest.main()
