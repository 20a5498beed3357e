"""Bundled class-mix and experiment presets (JSON files)."""

from __future__ import annotations

import json
from importlib import resources


def load_preset(name: str) -> dict:
    """Load a bundled preset by file stem, e.g. ``table1_mix``."""
    ref = resources.files(__package__).joinpath(f"{name}.json")
    if not ref.is_file():
        available = sorted(p.name[:-5] for p in resources.files(__package__).iterdir()
                           if p.name.endswith(".json"))
        raise KeyError(f"no preset {name!r}; available: {available}")
    return json.loads(ref.read_text())
