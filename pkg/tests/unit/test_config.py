"""Tests for settings loading."""

import pytest
import yaml

from consent_registry.config import Settings, load_settings
from consent_registry.errors import ConfigurationError


def _write(tmp_path, data):
    path = tmp_path / "settings.yaml"
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return str(path)


def test_defaults_without_a_file(monkeypatch):
    """
    Test that defaults apply when no file is named.

    :param monkeypatch: pytest's monkeypatch fixture.
    """
    monkeypatch.delenv("REGISTRY_CONFIG", raising=False)

    settings = load_settings()

    assert settings == Settings()
    assert settings.registry.match_threshold == 0.7
    assert settings.apportionment.lam == 0.7
    assert settings.bench.shard_counts == (1, 5, 25, 50)


def test_partial_file_keeps_other_defaults(tmp_path):
    """
    Test that a file overrides only the keys it names.

    :param tmp_path: pytest's temporary directory.
    """
    settings = load_settings(
        _write(
            tmp_path,
            {
                "bench": {"shard_counts": [1, 2], "corpus_size": 50},
                "gas": {"tx_base": 1000},
                "demo": None,
            },
        )
    )

    assert settings.bench.shard_counts == (1, 2)
    assert settings.bench.corpus_size == 50
    assert settings.bench.query_count == 200
    assert settings.gas.tx_base == 1000
    assert settings.demo == Settings().demo


def test_environment_variable(tmp_path, monkeypatch):
    """
    Test that ``REGISTRY_CONFIG`` names the default file.

    :param tmp_path: pytest's temporary directory.
    :param monkeypatch: pytest's monkeypatch fixture.
    """
    monkeypatch.setenv("REGISTRY_CONFIG", _write(tmp_path, {"demo": {"budget": 5}}))

    assert load_settings().demo.budget == 5


@pytest.mark.parametrize(
    "data",
    [
        {"ledger": {}},
        {"bench": {"shards": 3}},
        {"bench": [1, 2]},
        {"gas": {"tx_base": -1}},
        ["not", "a", "mapping"],
    ],
    ids=["unknown-section", "unknown-key", "not-a-section", "bad-value", "list"],
)
def test_invalid_files(tmp_path, data):
    """
    Test that malformed settings files are rejected.

    :param tmp_path: pytest's temporary directory.
    :param data: The file contents.
    """
    with pytest.raises(ConfigurationError):
        load_settings(_write(tmp_path, data))


def test_settings_render_as_yaml():
    """Test that rendered settings load back unchanged."""
    rendered = Settings().to_dict()

    assert rendered["bench"]["shard_counts"] == [1, 5, 25, 50]
    assert yaml.safe_load(yaml.safe_dump(rendered)) == rendered
