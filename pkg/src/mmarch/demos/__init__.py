"""Bundled demo models, addressable by short name from the CLI."""

from __future__ import annotations

from pathlib import Path

_ROOT = Path(__file__).parent

_DEMOS = {
    "threat": "threat.json",
    "retrieval": "retrieval.json",
    "wordloop": "wordloop.json",
    "bottleneck": "bottleneck.json",
}


def names() -> list[str]:
    return sorted(_DEMOS)


def path(name: str) -> Path | None:
    filename = _DEMOS.get(name)
    if filename is None:
        return None
    return _ROOT / filename
