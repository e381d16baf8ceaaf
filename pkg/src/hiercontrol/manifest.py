"""Run manifests: resolved config, seeds, timings and output hashes."""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

from . import __version__


class PhaseTimer:
    def __init__(self):
        self.timings = {}

    def phase(self, name: str):
        timer = self

        class _Ctx:
            def __enter__(self_inner):
                self_inner.t0 = time.perf_counter()
                return self_inner

            def __exit__(self_inner, *exc):
                timer.timings[name] = timer.timings.get(name, 0.0) \
                    + time.perf_counter() - self_inner.t0
                return False

        return _Ctx()


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, subcommand: str, config: dict, seed: int,
                   grid_summary: dict, timings: dict, extra: dict | None = None) -> Path:
    out_dir = Path(out_dir)
    inventory = {
        p.name: _sha256(p)
        for p in sorted(out_dir.iterdir())
        if p.is_file() and p.name != "manifest.json"
    }
    doc = {
        "subcommand": subcommand,
        "version": __version__,
        "seed": seed,
        "grid": grid_summary,
        "config": config,
        "timings_seconds": {k: round(v, 6) for k, v in timings.items()},
        "outputs": inventory,
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
