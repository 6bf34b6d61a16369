"""Bundled model, profile, and measurement fixtures."""

from importlib import resources


def fixture_path(name: str):
    """Filesystem path of a bundled fixture file."""
    return resources.files(__package__) / name


def fixture_text(name: str) -> str:
    return fixture_path(name).read_text(encoding="utf-8")
