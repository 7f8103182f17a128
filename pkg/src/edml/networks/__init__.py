"""Benchmark networks shipped with the package."""

from importlib import resources
from pathlib import Path

BUILTIN = ("asia", "spect")


def network_path(name_or_path) -> Path:
    """Resolve a built-in network name, or return the argument as a path."""
    if str(name_or_path) in BUILTIN:
        return Path(str(resources.files(__name__).joinpath(f"{name_or_path}.json")))
    return Path(name_or_path)
