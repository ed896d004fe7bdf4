"""Bundled mini-IR programs used by tests, docs, and the CLI examples.

Each ``.bir`` file exercises a different corner of the pipeline:
hot-but-sequential reductions, helper functions that must travel with
an exported kernel, loop-carried array dependences, triangular
iteration spaces, wrapping integer arithmetic, non-affine subscripts,
and data-dependent (gather-style) subscripts.
"""

from __future__ import annotations

from importlib import resources

__all__ = ["names", "load"]


def names() -> list[str]:
    """Names of the bundled programs, without the .bir extension."""
    out = []
    for entry in resources.files(__package__).iterdir():
        if entry.name.endswith(".bir"):
            out.append(entry.name[:-4])
    return sorted(out)


def load(name: str) -> str:
    """Source text of a bundled program by name."""
    fname = name if name.endswith(".bir") else name + ".bir"
    res = resources.files(__package__).joinpath(fname)
    if not res.is_file():
        raise KeyError(f"no bundled program named {name!r}")
    return res.read_text(encoding="utf-8")
