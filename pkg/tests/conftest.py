import os

import pytest


@pytest.fixture(autouse=True)
def clean_factprobe_env(monkeypatch):
    """Ambient FACTPROBE_* variables must not steer any test."""
    for name in list(os.environ):
        if name.startswith("FACTPROBE_"):
            monkeypatch.delenv(name)
