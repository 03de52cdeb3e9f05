"""Tower and storm-track input: parsing, validation, track interpolation
and great-circle distances.

File I/O uses km/h for wind speeds; everything else in the package works
in m/s and converts at the boundary with :data:`KMH_PER_MS`.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
KMH_PER_MS = 3.6

TOWER_COLUMNS = ("id", "lat_deg", "lon_deg", "height_m", "voltage_kv", "damage")
TRACK_COLUMNS = (
    "timestamp",
    "eye_lat_deg",
    "eye_lon_deg",
    "vmax_3min_10m_kmh",
    "central_pressure_hpa",
)


class IngestError(ValueError):
    """Raised for malformed or inconsistent input data."""


class Damage(str, Enum):
    NONE = "none"
    PARTIAL = "partial"
    COLLAPSE = "collapse"

    @classmethod
    def parse(cls, text: str) -> "Damage":
        key = text.strip().lower()
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown damage label {text!r}")


class DamageState(str, Enum):
    """Damage states for fragility fitting.

    Functionality disruption covers partial damage and collapse, so the
    collapse set is always a subset of the functionality-disruption set.
    """

    COLLAPSE = "CO"
    FUNCTIONALITY_DISRUPTION = "FD"

    def reached(self, damage: Damage) -> bool:
        if self is DamageState.COLLAPSE:
            return damage is Damage.COLLAPSE
        return damage in (Damage.PARTIAL, Damage.COLLAPSE)


@dataclass(frozen=True)
class TowerRecord:
    id: str
    lat: float
    lon: float
    height_m: Optional[float] = None
    voltage_kv: Optional[float] = None
    damage: Damage = Damage.NONE

    def __post_init__(self):
        if not self.id:
            raise ValueError("tower id must be nonempty")
        _check_lat(self.lat)
        _check_lon(self.lon)
        if self.height_m is not None and not self.height_m > 0:
            raise ValueError(f"height_m must be > 0, got {self.height_m}")
        if self.voltage_kv is not None and not self.voltage_kv > 0:
            raise ValueError(f"voltage_kv must be > 0, got {self.voltage_kv}")
        if not isinstance(self.damage, Damage):
            raise ValueError(f"damage must be a Damage, got {self.damage!r}")


@dataclass(frozen=True)
class TrackPoint:
    """Storm eye position with 3-min sustained 10 m intensity in km/h."""

    time: datetime
    eye_lat: float
    eye_lon: float
    vmax_kmh: float
    central_pressure_hpa: Optional[float] = None

    def __post_init__(self):
        _check_lat(self.eye_lat)
        _check_lon(self.eye_lon)
        if not (self.vmax_kmh > 0 and math.isfinite(self.vmax_kmh)):
            raise ValueError(f"nonpositive intensity {self.vmax_kmh}")
        if self.time.tzinfo is None:
            object.__setattr__(self, "time", self.time.replace(tzinfo=timezone.utc))


@dataclass(frozen=True)
class Track:
    points: tuple

    def __post_init__(self):
        pts = tuple(self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) < 2:
            raise ValueError("a track needs at least 2 points")
        for a, b in zip(pts, pts[1:]):
            if not b.time > a.time:
                raise ValueError(
                    f"track timestamps must be strictly increasing ({a.time} -> {b.time})"
                )

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, i):
        return self.points[i]

    def arrays(self):
        """Return ``(lat, lon, vmax_kmh)`` as float64 arrays."""
        lat = np.array([p.eye_lat for p in self.points], dtype=float)
        lon = np.array([p.eye_lon for p in self.points], dtype=float)
        vmax = np.array([p.vmax_kmh for p in self.points], dtype=float)
        return lat, lon, vmax


def _check_lat(lat):
    if not (-90.0 <= lat <= 90.0):
        raise ValueError(f"latitude out of range: {lat}")


def _check_lon(lon):
    if not (-180.0 <= lon <= 180.0):
        raise ValueError(f"longitude out of range: {lon}")


# -- parsing ---------------------------------------------------------------


def _float_field(row, name, rownum, required=True):
    raw = (row.get(name) or "").strip()
    if raw == "":
        if required:
            raise IngestError(f"missing {name} at row {rownum}")
        return None
    try:
        value = float(raw)
    except ValueError:
        raise IngestError(f"malformed {name} {raw!r} at row {rownum}") from None
    if not math.isfinite(value):
        raise IngestError(f"non-finite {name} at row {rownum}")
    return value


def _lower_keys(row):
    return {(k or "").strip().lower(): v for k, v in row.items()}


def _tower_from_fields(fields, rownum) -> TowerRecord:
    tid = (fields.get("id") or "").strip()
    if not tid:
        raise IngestError(f"missing id at row {rownum}")
    lat = _float_field(fields, "lat_deg", rownum)
    lon = _float_field(fields, "lon_deg", rownum)
    if not -90.0 <= lat <= 90.0:
        raise IngestError(f"latitude out of range at row {rownum} (lat_deg={lat})")
    if not -180.0 <= lon <= 180.0:
        raise IngestError(f"longitude out of range at row {rownum} (lon_deg={lon})")
    height = _float_field(fields, "height_m", rownum, required=False)
    voltage = _float_field(fields, "voltage_kv", rownum, required=False)
    if height is not None and height <= 0:
        raise IngestError(f"height_m must be > 0 at row {rownum}")
    if voltage is not None and voltage <= 0:
        raise IngestError(f"voltage_kv must be > 0 at row {rownum}")
    label = fields.get("damage")
    if label is None or str(label).strip() == "":
        raise IngestError(f"missing damage at row {rownum}")
    try:
        damage = Damage.parse(str(label))
    except ValueError:
        raise IngestError(f"unknown damage label {label!r} at row {rownum}") from None
    return TowerRecord(tid, lat, lon, height, voltage, damage)


def parse_towers(path, format: Optional[str] = None) -> list[TowerRecord]:
    """Read tower records from CSV or GeoJSON.

    Parameters
    ----------
    path : path-like
        Input file.
    format : {"csv", "geojson"}, optional
        Inferred from the suffix when omitted.

    Raises
    ------
    IngestError
        On a malformed row (message names the row and field), a duplicate
        id, or an out-of-range coordinate.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"towers file not found: {path}")
    if format is None:
        format = "geojson" if path.suffix.lower() in (".geojson", ".json") else "csv"
    format = format.lower()
    if format == "csv":
        towers = list(_iter_csv_towers(path))
    elif format == "geojson":
        towers = list(_iter_geojson_towers(path))
    else:
        raise IngestError(f"unsupported tower format {format!r}")

    seen = {}
    for k, t in enumerate(towers, start=1):
        if t.id in seen:
            raise IngestError(f"duplicate id {t.id!r} at row {k} (first at row {seen[t.id]})")
        seen[t.id] = k
    log.info("parsed %d towers from %s", len(towers), path)
    return towers


def _iter_csv_towers(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(_skip_comments(fh))
        if reader.fieldnames is None:
            raise IngestError(f"{path}: missing header row")
        header = {f.strip().lower() for f in reader.fieldnames}
        missing = {"id", "lat_deg", "lon_deg", "damage"} - header
        if missing:
            raise IngestError(f"{path}: header lacks columns {sorted(missing)}")
        for rownum, row in enumerate(reader, start=1):
            yield _tower_from_fields(_lower_keys(row), rownum)


def _iter_geojson_towers(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise IngestError(f"{path}: invalid JSON ({exc})") from None
    features = doc.get("features") if isinstance(doc, dict) else None
    if features is None:
        raise IngestError(f"{path}: not a FeatureCollection")
    for rownum, feat in enumerate(features, start=1):
        geom = feat.get("geometry") or {}
        if geom.get("type") != "Point":
            raise IngestError(f"feature {rownum} is not a Point")
        coords = geom.get("coordinates") or []
        if len(coords) < 2:
            raise IngestError(f"feature {rownum} has malformed coordinates")
        props = {str(k).lower(): v for k, v in (feat.get("properties") or {}).items()}
        fields = {
            "id": str(props.get("id", feat.get("id", "")) or ""),
            "lat_deg": str(coords[1]),
            "lon_deg": str(coords[0]),
            "height_m": "" if props.get("height_m") is None else str(props["height_m"]),
            "voltage_kv": "" if props.get("voltage_kv") is None else str(props["voltage_kv"]),
            "damage": props.get("damage"),
        }
        yield _tower_from_fields(fields, rownum)


def _skip_comments(lines):
    for line in lines:
        if not line.startswith("#"):
            yield line


def _parse_time(text, rownum):
    raw = text.strip()
    if raw.endswith("Z") or raw.endswith("z"):
        raw = raw[:-1] + "+00:00"
    try:
        t = datetime.fromisoformat(raw)
    except ValueError:
        raise IngestError(f"malformed timestamp {text!r} at row {rownum}") from None
    if t.tzinfo is None:
        t = t.replace(tzinfo=timezone.utc)
    return t.astimezone(timezone.utc)


def parse_track(path) -> Track:
    """Read a storm track CSV (one row per advisory)."""
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"track file not found: {path}")
    points = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(_skip_comments(fh))
        if reader.fieldnames is None:
            raise IngestError(f"{path}: missing header row")
        for rownum, row in enumerate(reader, start=1):
            f = _lower_keys(row)
            if not (f.get("timestamp") or "").strip():
                raise IngestError(f"missing timestamp at row {rownum}")
            t = _parse_time(f["timestamp"], rownum)
            lat = _float_field(f, "eye_lat_deg", rownum)
            lon = _float_field(f, "eye_lon_deg", rownum)
            vmax = _float_field(f, "vmax_3min_10m_kmh", rownum)
            pc = _float_field(f, "central_pressure_hpa", rownum, required=False)
            if vmax <= 0:
                raise IngestError(f"nonpositive intensity {vmax} at row {rownum}")
            if not -90.0 <= lat <= 90.0:
                raise IngestError(f"latitude out of range at row {rownum}")
            if not -180.0 <= lon <= 180.0:
                raise IngestError(f"longitude out of range at row {rownum}")
            points.append(TrackPoint(t, lat, lon, vmax, pc))
    if len(points) < 2:
        raise IngestError(f"{path}: a track needs at least 2 rows, got {len(points)}")
    for k in range(1, len(points)):
        if not points[k].time > points[k - 1].time:
            raise IngestError(f"timestamps not strictly increasing at row {k + 1}")
    return Track(points)


# -- serialization ---------------------------------------------------------


def _fmt(x):
    return "" if x is None else repr(float(x))


def write_towers(path, towers: Iterable[TowerRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TOWER_COLUMNS)
        for t in towers:
            w.writerow([t.id, _fmt(t.lat), _fmt(t.lon), _fmt(t.height_m),
                        _fmt(t.voltage_kv), t.damage.value])


def format_time(t: datetime) -> str:
    return t.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S") + (
        f".{t.microsecond:06d}Z" if t.microsecond else "Z"
    )


def write_track(path, track: Track) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACK_COLUMNS)
        for p in track:
            w.writerow([format_time(p.time), _fmt(p.eye_lat), _fmt(p.eye_lon),
                        _fmt(p.vmax_kmh), _fmt(p.central_pressure_hpa)])


# -- geometry and interpolation ---------------------------------------------


def interpolate_track(track: Track, step_minutes: int = 15) -> Track:
    """Resample a track at a uniform time step.

    Eye position and intensity are linear in time. Central pressure is
    interpolated only where both bracketing advisories carry it. When the
    step does not divide the span, the final advisory is appended so the
    track end is never dropped.
    """
    if int(step_minutes) != step_minutes or step_minutes <= 0:
        raise ValueError(f"step_minutes must be a positive integer, got {step_minutes}")
    step = timedelta(minutes=int(step_minutes))
    pts = track.points
    t0, t_end = pts[0].time, pts[-1].time
    times = []
    t = t0
    while t <= t_end:
        times.append(t)
        t = t + step
    if times[-1] < t_end:
        times.append(t_end)

    out = []
    seg = 0
    for t in times:
        while seg < len(pts) - 2 and t > pts[seg + 1].time:
            seg += 1
        a, b = pts[seg], pts[seg + 1]
        if t == a.time:
            out.append(a)
            continue
        if t == b.time:
            out.append(b)
            continue
        frac = (t - a.time) / (b.time - a.time)
        pc = None
        if a.central_pressure_hpa is not None and b.central_pressure_hpa is not None:
            pc = a.central_pressure_hpa + frac * (b.central_pressure_hpa - a.central_pressure_hpa)
        out.append(TrackPoint(
            t,
            a.eye_lat + frac * (b.eye_lat - a.eye_lat),
            a.eye_lon + frac * (b.eye_lon - a.eye_lon),
            a.vmax_kmh + frac * (b.vmax_kmh - a.vmax_kmh),
            pc,
        ))
    return Track(tuple(out))


def geodesic_km(a: Sequence[float], b: Sequence[float]) -> float:
    """Haversine distance between two (lat, lon) pairs in degrees."""
    lat1, lon1 = a
    lat2, lon2 = b
    for lat in (lat1, lat2):
        _check_lat(lat)
    for lon in (lon1, lon2):
        _check_lon(lon)
    return float(haversine_km(lat1, lon1, lat2, lon2))


def haversine_km(lat1, lon1, lat2, lon2):
    """Vectorised haversine; no range validation."""
    p1 = np.radians(lat1)
    p2 = np.radians(lat2)
    dphi = p2 - p1
    dlam = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dphi / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def tower_arrays(towers: Sequence[TowerRecord]):
    """``(lat, lon)`` arrays for a tower list."""
    lat = np.fromiter((t.lat for t in towers), dtype=float, count=len(towers))
    lon = np.fromiter((t.lon for t in towers), dtype=float, count=len(towers))
    return lat, lon


def failure_mask(towers: Sequence[TowerRecord], state: DamageState) -> np.ndarray:
    return np.fromiter((state.reached(t.damage) for t in towers), dtype=bool, count=len(towers))
