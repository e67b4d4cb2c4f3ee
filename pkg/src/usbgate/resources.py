"""Access to packaged data files (configs, rule sets, scenario corpus)."""

from __future__ import annotations

from importlib import resources


def read_data_text(name: str) -> str:
    return resources.files("usbgate").joinpath("data", name).read_text(encoding="utf-8")


def read_text_param(path: str) -> str:
    """Read a config-referenced file; 'pkg:<name>' refers to packaged data."""
    if path.startswith("pkg:"):
        return read_data_text(path[4:])
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()
