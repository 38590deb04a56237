"""Target registry."""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from semfuzz.model import ProbeClass
from semfuzz.targets import chunkfmt, minijson
from semfuzz.targets.harness import (
    ExternalCommandTarget,
    InProcessTarget,
    TargetAdapter,
    TargetLoadError,
    execute,
    register_probe,
)

_BUILTIN = {
    "chunkfmt": chunkfmt,
    "minijson": minijson,
}

__all__ = [
    "TargetAdapter",
    "TargetLoadError",
    "available_targets",
    "bundled_seed_dir",
    "execute",
    "load_target",
    "register_probe",
]


def available_targets() -> list[str]:
    return sorted(_BUILTIN)


def bundled_seed_dir(name: str) -> Path:
    return Path(str(resources.files("semfuzz.targets") / "seeds" / name))


def load_target(
    name: str,
    seed_dir: Optional[Path] = None,
    command: Optional[Sequence[str]] = None,
    probe_totals: Optional[dict] = None,
    wall_clock_hangs: bool = True,
) -> TargetAdapter:
    if command:
        totals = probe_totals or {c: 1 for c in ProbeClass}
        return ExternalCommandTarget(name, command, totals, seed_dir=seed_dir)
    mod = _BUILTIN.get(name)
    if mod is None:
        raise TargetLoadError(f"unknown target {name!r}; available: {', '.join(available_targets())}")
    return InProcessTarget(
        name,
        mod.parse,
        mod.P,
        seed_dir=seed_dir if seed_dir is not None else bundled_seed_dir(name),
        library_info=mod.LIBRARY_INFO,
        dictionary=mod.DICTIONARY,
        wall_clock_hangs=wall_clock_hangs,
    )
