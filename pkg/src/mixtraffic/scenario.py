"""YAML scenario files.

A scenario file is a mapping of :class:`~mixtraffic.engine.ScenarioConfig`
fields.  An explicit network replaces the grid::

    network:
      junctions: [[A, 0, 0], [B, 100, 0], ...]       # id, x, y
      edges: [[A->B, A, B, 100, 13.9], ...]          # id, from, to, length|null, limit
    demand:
      - {origin: A->B, destination: C->D, rate: 0.05, rv_rate: 0.0}
"""
from __future__ import annotations

from pathlib import Path

import yaml

from .net import Junction, RoadNetwork


def network_from_dict(d: dict) -> RoadNetwork:
    try:
        junctions = [Junction(str(j[0]), float(j[1]), float(j[2])) for j in d["junctions"]]
        edges = [
            (str(e[0]), str(e[1]), str(e[2]), None if e[3] is None else float(e[3]), float(e[4]))
            for e in d["edges"]
        ]
    except (KeyError, IndexError, TypeError) as exc:
        raise ValueError(f"malformed network table: {exc}") from exc
    return RoadNetwork(junctions, edges)


def load_scenario(path: str | Path):
    from .engine import ScenarioConfig

    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: scenario must be a mapping")
    if "network" in data and "grid" not in data:
        data["grid"] = None
    return ScenarioConfig.from_dict(data)


def dump_scenario(config, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=True))
