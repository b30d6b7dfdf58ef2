"""Benchmark systems shipped with the package (``ltac/data/systems``)."""

from __future__ import annotations

from importlib import resources

from .system import PolySystem, parse_system

PRESETS = ("b1", "decay", "vdp", "b1_h")

# Default initial conditions before the uncontrolled settling run.
INITIAL_STATES = {
    "b1": (2.0,),
    "decay": (1.0,),
    "vdp": (2.0, 0.0),
    "b1_h": (2.0,),
}


def system_text(name: str) -> str:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("ltac.data.systems").joinpath(f"{name}.sys").read_text()


def load(name: str) -> PolySystem:
    return parse_system(system_text(name), name=name)


def system_path(name: str):
    return resources.files("ltac.data.systems").joinpath(f"{name}.sys")
