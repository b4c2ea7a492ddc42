"""Expand the compact JSON metric fixtures into run traces."""
import json
from pathlib import Path

import numpy as np

from mixtraffic.metrics import ControlRecord, RunTrace

FIXTURES = Path(__file__).parent / "fixtures"


def load_fixture(name):
    """Expand a compact JSON fixture into a RunTrace."""
    d = json.loads((FIXTURES / f"metrics_{name}.json").read_text())
    tr = RunTrace(dt=d["dt"], n_intersections=d["n_intersections"])
    for vid, spans in d.get("zone", {}).items():
        for t0, t1, stopped, speed, accel in spans:
            for t in range(t0, t1):
                tr.zone_rows.append((float(t), int(vid), speed, accel, bool(stopped)))
    tr.crossings = [tuple(c) for c in d.get("crossings", [])]
    tr.completions = [tuple(c) for c in d.get("completions", [])]
    tr.control_log = [ControlRecord(t, j, v, a, bool(o), 0.0) for t, j, v, a, o in d.get("control", [])]
    if "series" in d:
        s = d["series"]
        n_app = 1 + max(r[0] for r in s["runs"])
        for t in range(s["t0"], s["t1"]):
            row = np.zeros(n_app)
            for k, a, b, w in s["runs"]:
                if a <= t < b:
                    row[k] = w
            tr.approach_times.append(float(t))
            tr.approach_waits.append(row)
    return tr, tuple(d["window"]), d["expected"]
