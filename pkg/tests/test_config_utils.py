from pathlib import Path

import pytest

from pointcube.config_utils import (apply_overrides, config_from_dict, config_to_dict, load_config,
                                    parse_override)
from pointcube.errors import ConfigError
from pointcube.losses import LossConfig
from pointcube.model import ModelConfig
from pointcube.training import TrainConfig


def test_defaults_without_file():
    config = load_config()

    assert config == TrainConfig()
    assert config.loss.tau == 0.07
    assert config.loss.kernel_mode == 'standard'
    assert config.model.d_e == 256 and config.model.d_out == 128


def test_shipped_template_matches_defaults():
    template = Path(__file__).resolve().parent.parent / 'config' / 'pointcube.toml'
    assert load_config(template) == TrainConfig()


def test_load_config_from_toml(tmp_path):
    """Test that sections map onto the nested dataclasses and ints widen to floats."""
    # Arrange
    path = tmp_path / 'run.toml'
    path.write_text(
        "[train]\nepochs = 3\nlearning_rate = 1\ndtype = \"float64\"\n\n"
        "[model]\nd_e = 32\nhidden = [8, 16]\n\n"
        "[loss]\nlocal_mode = \"soft\"\ntau = 0.5\n"
    )

    # Act
    config = load_config(path)

    # Assert
    assert config.epochs == 3
    assert config.learning_rate == 1.0 and isinstance(config.learning_rate, float)
    assert config.model == ModelConfig(d_e=32, hidden=[8, 16])
    assert config.loss == LossConfig(local_mode='soft', tau=0.5)


def test_missing_file_hints_at_template(tmp_path):
    with pytest.raises(ConfigError) as excinfo:
        load_config(tmp_path / 'nope.toml')
    assert 'config/pointcube.toml' in str(excinfo.value)


def test_invalid_toml(tmp_path):
    path = tmp_path / 'bad.toml'
    path.write_text("[train\nepochs = 3\n")
    with pytest.raises(ConfigError) as excinfo:
        load_config(path)
    assert 'Invalid TOML' in str(excinfo.value)


@pytest.mark.parametrize('data, fragment', [
    ({'train': {'epoch': 3}}, 'epoch'),
    ({'model': {'width': 3}}, 'model.width'),
    ({'optimizer': {}}, 'optimizer'),
    ({'train': {'model': {}}}, '[model]'),
])
def test_unknown_keys_and_sections(data, fragment):
    with pytest.raises(ConfigError) as excinfo:
        config_from_dict(data)
    assert fragment in str(excinfo.value)


@pytest.mark.parametrize('data', [
    {'train': {'epochs': 'many'}},
    {'train': {'epochs': True}},
    {'model': {'hidden': 3}},
    {'loss': {'tau': 'warm'}},
])
def test_wrong_types(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


@pytest.mark.parametrize('data', [{'train': {'batch_size': 1}}, {'loss': {'tau': 0}},
                                  {'train': {'frame': 'sphere'}}, {'model': {'heads': 3}}])
def test_validation_errors_become_config_errors(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_round_trip_through_dict():
    config = TrainConfig(epochs=7, model=ModelConfig(d_e=64, hidden=[32]), loss=LossConfig(local_mode='off'))
    assert config_from_dict(config_to_dict(config)) == config


@pytest.mark.parametrize('text, expected', [
    ('loss.tau=0.5', ('loss', 'tau', 0.5)),
    ('train.epochs = 12', ('train', 'epochs', 12)),
    ('loss.kernel_mode=literal', ('loss', 'kernel_mode', 'literal')),
    ('loss.local_mode="soft"', ('loss', 'local_mode', 'soft')),
    ('model.hidden=[16, 32]', ('model', 'hidden', [16, 32])),
    ('model.self_attention=false', ('model', 'self_attention', False)),
])
def test_parse_override(text, expected):
    assert parse_override(text) == expected


@pytest.mark.parametrize('text', ['loss.tau', 'tau=0.5', 'optimizer.lr=1', 'loss.=1'])
def test_parse_override_rejects_bad_keys(text):
    with pytest.raises(ConfigError):
        parse_override(text)


def test_apply_overrides_revalidates():
    config = apply_overrides(TrainConfig(), ['loss.tau=1', 'train.threads=2', 'model.d_out=64'])

    assert config.loss.tau == 1.0
    assert config.threads == 2
    assert config.model.d_out == 64
    with pytest.raises(ConfigError):
        apply_overrides(config, ['loss.kernel_mode=printed'])
