"""CSV readers and writers for locations, real-time values and revisions.

locations.csv  location_id, latitude, longitude, population, hospitals, icu_beds, income
realtime.csv   location_id, week, feature, value
updates.csv    location_id, target_week, received_week, feature, value
targets.csv    location_id, week, value          (optional; synthetic data)
graph.csv      src, dst                          (optional adjacency override)
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Optional

import numpy as np

from ..geo import SpatialFeatures, graph_from_edges
from .dataset import Dataset, UpdateStream
from .preprocess import fill_updates

LOCATION_COLUMNS = ["location_id", "latitude", "longitude", "population", "hospitals", "icu_beds", "income"]


def _opt_float(s: str) -> Optional[float]:
    s = (s or "").strip()
    return None if s == "" else float(s)


def read_locations(path) -> list[SpatialFeatures]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append(SpatialFeatures(r["location_id"], float(r["population"]),
                                   _opt_float(r.get("hospitals")), _opt_float(r.get("icu_beds")),
                                   float(r["longitude"]), float(r["latitude"]),
                                   _opt_float(r.get("income"))))
    ids = [f.location_id for f in out]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate location ids in locations file")
    return out


def load_dataset(locations_csv, realtime_csv, updates_csv, targets_csv=None, graph_csv=None,
                 target_feature: Optional[str] = None) -> Dataset:
    """Assemble the real-time tensor and the filled update stream.

    When several revisions target the same (location, week, feature) the one
    received last wins. Latency per (location, week) is the largest latency
    among its revised features.
    """
    locations = read_locations(locations_csv)
    pos = {loc.location_id: i for i, loc in enumerate(locations)}

    with open(realtime_csv, newline="") as fh:
        rt = list(csv.DictReader(fh))
    features: list[str] = []
    fpos: dict[str, int] = {}
    weeks = set()
    for r in rt:
        if r["location_id"] not in pos:
            raise KeyError(f"unknown location id {r['location_id']!r} in realtime data")
        if r["feature"] not in fpos:
            fpos[r["feature"]] = len(features)
            features.append(r["feature"])
        weeks.add(int(r["week"]))
    T = max(weeks) + 1 if weeks else 0
    if weeks != set(range(T)):
        raise ValueError("weeks in realtime data must form a contiguous 0-based range")
    N, F = len(locations), len(features)
    X = np.zeros((N, T, F))
    seen = np.zeros((N, T, F), dtype=bool)
    for r in rt:
        key = (pos[r["location_id"]], int(r["week"]), fpos[r["feature"]])
        if seen[key]:
            raise ValueError(f"duplicate realtime entry {r['location_id']}, week {r['week']}, {r['feature']}")
        seen[key] = True
        X[key] = float(r["value"])

    U = np.zeros_like(X)
    revised = np.zeros_like(seen)
    received = np.full((N, T, F), -1, dtype=np.int64)
    with open(updates_csv, newline="") as fh:
        for r in csv.DictReader(fh):
            if r["location_id"] not in pos:
                raise KeyError(f"unknown location id {r['location_id']!r} in updates")
            tw, rw = int(r["target_week"]), int(r["received_week"])
            if rw < tw:
                raise ValueError(f"revision received in week {rw} for future week {tw}")
            if not 0 <= tw < T:
                raise ValueError(f"revision targets week {tw} outside 0..{T - 1}")
            if r["feature"] not in fpos:
                raise KeyError(f"unknown feature {r['feature']!r} in updates")
            key = (pos[r["location_id"]], tw, fpos[r["feature"]])
            if rw >= received[key]:
                received[key] = rw
                U[key] = float(r["value"])
                revised[key] = True
    lat = np.where(revised, received - np.arange(T)[None, :, None], 0).max(axis=2)
    U, lat = fill_updates(U, revised, X, lat)

    targets = None
    if targets_csv is not None and Path(targets_csv).exists():
        targets = np.zeros((N, T))
        with open(targets_csv, newline="") as fh:
            for r in csv.DictReader(fh):
                targets[pos[r["location_id"]], int(r["week"])] = float(r["value"])
    graph = None
    if graph_csv is not None and Path(graph_csv).exists():
        with open(graph_csv, newline="") as fh:
            graph = graph_from_edges(locations, [(r["src"], r["dst"]) for r in csv.DictReader(fh)])
    tf = 0 if target_feature is None else features.index(target_feature)
    return Dataset(locations, features, X, UpdateStream(U, lat, revised), targets, tf, graph)


def load_dataset_dir(path, graph_override: bool = True) -> Dataset:
    """Load a directory written by :func:`write_dataset` (or laid out the same way)."""
    p = Path(path)
    manifest = {}
    if (p / "manifest.json").exists():
        manifest = json.loads((p / "manifest.json").read_text())
    ds = load_dataset(p / "locations.csv", p / "realtime.csv", p / "updates.csv",
                      p / "targets.csv", p / "graph.csv" if graph_override else None,
                      manifest.get("target_feature"))
    ds.meta.update(manifest)
    return ds


def _fmt(v: float) -> str:
    return repr(float(v))


def write_dataset(path, ds: Dataset, manifest: Optional[dict] = None,
                  received_week: Optional[np.ndarray] = None) -> dict:
    """Write the CSV files plus manifest.json with SHA-256 checksums.

    ``received_week`` (N x T x F) gives the receipt week of each revised
    entry; by default it is target week + latency.
    """
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    N, T, F = ds.X.shape
    with open(p / "locations.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOCATION_COLUMNS)
        for loc in ds.locations:
            w.writerow([loc.location_id, _fmt(loc.latitude), _fmt(loc.longitude), _fmt(loc.population),
                        "" if loc.hospitals is None else _fmt(loc.hospitals),
                        "" if loc.icu_beds is None else _fmt(loc.icu_beds),
                        "" if loc.income is None else _fmt(loc.income)])
    ids = ds.location_ids
    with open(p / "realtime.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["location_id", "week", "feature", "value"])
        for i in range(N):
            for t in range(T):
                for f in range(F):
                    w.writerow([ids[i], t, ds.features[f], _fmt(ds.X[i, t, f])])
    if received_week is None:
        received_week = np.broadcast_to((np.arange(T)[None, :] + ds.latency)[:, :, None], (N, T, F))
    with open(p / "updates.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["location_id", "target_week", "received_week", "feature", "value"])
        for i, t, f in zip(*np.nonzero(ds.updates.revised)):
            w.writerow([ids[i], t, int(received_week[i, t, f]), ds.features[f], _fmt(ds.U[i, t, f])])
    files = ["locations.csv", "realtime.csv", "updates.csv"]
    if ds.targets is not None:
        with open(p / "targets.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["location_id", "week", "value"])
            for i in range(N):
                for t in range(T):
                    w.writerow([ids[i], t, _fmt(ds.targets[i, t])])
        files.append("targets.csv")
    if ds.graph is not None:
        with open(p / "graph.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["src", "dst"])
            a = ds.graph.adjacency
            for i, j in zip(*np.nonzero(np.triu(a, k=1))):
                w.writerow([ids[i], ids[j]])
        files.append("graph.csv")
    m = dict(manifest or {})
    m["target_feature"] = ds.features[ds.target_feature]
    m["checksums"] = {f: hashlib.sha256((p / f).read_bytes()).hexdigest() for f in files}
    (p / "manifest.json").write_text(json.dumps(m, indent=2, sort_keys=True))
    return m
