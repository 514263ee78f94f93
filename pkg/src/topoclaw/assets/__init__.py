"""Bundled JSON assets: verb table, deny rules, skill manifests, scenarios."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path


def asset_root() -> Path:
    return Path(str(resources.files(__name__)))


def load_json(relpath: str) -> dict:
    return json.loads((asset_root() / relpath).read_text(encoding="utf-8"))


def load_text(relpath: str) -> str:
    return (asset_root() / relpath).read_text(encoding="utf-8")
