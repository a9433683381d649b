"""Public benchmark networks bundled with the package."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .inp import parse_inp
from .network import NetworkModel

BUNDLED = ("anytown", "hanoi", "net1", "ltown")


def network_path(name: str) -> Path:
    path = Path(str(resources.files("wdnpress") / "networks" / f"{name}.inp"))
    if not path.exists():
        raise FileNotFoundError(f"no bundled network named {name!r}")
    return path


def load_network(name: str) -> NetworkModel:
    """Parse a bundled network by short name (``anytown``, ``ltown``, ...)."""
    return parse_inp(network_path(name).read_text(encoding="utf-8"), name=name)


def resolve(spec: str) -> NetworkModel:
    """A bundled name or a path to an INP file."""
    if spec in BUNDLED or (not spec.endswith(".inp") and not Path(spec).exists()):
        return load_network(spec)
    path = Path(spec)
    return parse_inp(path.read_text(encoding="utf-8"), name=path.stem)
