"""Bundled grids and nominal injection profiles."""

from importlib import resources
from pathlib import Path

TOY2_AC = "toy2_ac.json"
TOY5_HYBRID = "toy5_hybrid.json"
CASE33_HYBRID = "case33_hybrid.json"
CASE33_HYBRID_LOADS = "case33_hybrid_loads.csv"
TOY5_HYBRID_LOADS = "toy5_hybrid_loads.csv"


def path(name: str) -> Path:
    """Filesystem path of a bundled data file."""
    p = resources.files(__package__) / name
    return Path(str(p))
