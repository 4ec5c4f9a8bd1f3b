"""Shared fixtures."""

import json

import pytest

from eecap import logfire_config
from eecap.config import settings
from eecap.model import GeneralModel, NoiselessModel


@pytest.fixture(autouse=True)
def no_logfire(monkeypatch):
    """Keep tests offline: mark Logfire as configured but inactive."""
    monkeypatch.setattr(logfire_config, "_logfire_configured", True)
    monkeypatch.setattr(logfire_config, "_logfire_active", False)
    monkeypatch.setattr(settings, "threads", 1)


@pytest.fixture
def short_candidate_lists(monkeypatch):
    monkeypatch.setattr(settings, "max_candidates", 2**8)


@pytest.fixture
def single_unit():
    return NoiselessModel(total_units=1)


@pytest.fixture
def two_units():
    return NoiselessModel(total_units=2)


@pytest.fixture
def lossless_pair():
    """B1 = B2 = 1, perfect links, no harvesting: one unit moving back and forth."""
    return GeneralModel.symmetric(buffer=1)


@pytest.fixture
def noisy_pair():
    return GeneralModel.symmetric(buffer=2, p_rc=0.1, p_rn=0.1, p_lc=0.1, p_ln=0.1)


@pytest.fixture
def write_json(tmp_path):
    def _write(name, data):
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return str(path)

    return _write
