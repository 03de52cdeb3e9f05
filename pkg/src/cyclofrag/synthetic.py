"""Synthetic scenarios with a known (planted) fragility.

Used by the acceptance suite, the benchmark and the CLI ``demo`` data
generator. Nothing here is needed for real inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import List, Tuple

import numpy as np

from .fragility import lognormal_cdf
from .ingest import Damage, Track, TowerRecord, TrackPoint, interpolate_track, tower_arrays
from .uncertainty import FS_CONFIG
from .windfield import WindConfig, gust_field_arrays

# planted curves (km/h, log-std)
FD_CURVE = (280.4, 0.088)
CO_CURVE = (292.5, 0.104)

_T0 = datetime(2019, 5, 3, 0, 0, tzinfo=timezone.utc)


def oracle_dataset(n: int = 41_814, seed: int = 0, curve=FD_CURVE, lo: float = 150.0, hi: float = 400.0):
    """Gusts uniform on ``[lo, hi]`` and Bernoulli failures from a lognormal curve."""
    rng = np.random.default_rng(seed)
    gusts = rng.uniform(lo, hi, n)
    failed = rng.random(n) < lognormal_cdf(gusts, *curve)
    return gusts, failed


def synthetic_track(hours: int = 24, vmax_kmh=(250.0, 245.0, 235.0, 215.0, 190.0)) -> Track:
    """A north-north-east moving storm sampled every 6 h."""
    n = len(vmax_kmh)
    step = hours / (n - 1)
    lat = np.linspace(18.0, 22.0, n)
    lon = np.linspace(85.4, 86.9, n)
    pts = [TrackPoint(_T0 + timedelta(hours=step * i), float(lat[i]), float(lon[i]), float(v))
           for i, v in enumerate(vmax_kmh)]
    return Track(tuple(pts))


def synthetic_towers(track: Track, n: int, seed: int = 0, half_width_km: float = 120.0) -> List[Tuple[float, float]]:
    """Tower positions scattered in a corridor around the track."""
    rng = np.random.default_rng(seed)
    lat, lon, _ = track.arrays()
    t = rng.random(n) * (len(lat) - 1)
    k = np.minimum(t.astype(int), len(lat) - 2)
    f = t - k
    clat = lat[k] + f * (lat[k + 1] - lat[k])
    clon = lon[k] + f * (lon[k + 1] - lon[k])
    # cross-track offset along the local normal
    dlat = lat[k + 1] - lat[k]
    dlon = (lon[k + 1] - lon[k]) * np.cos(np.radians(clat))
    norm = np.hypot(dlat, dlon)
    off = rng.uniform(-half_width_km, half_width_km, n) / 111.19
    plat = clat - off * dlon / norm
    plon = clon + off * dlat / norm / np.cos(np.radians(clat))
    return list(zip(plat.tolist(), plon.tolist()))


@dataclass
class Scenario:
    track: Track
    towers: List[TowerRecord]
    truth_gust: np.ndarray
    truth_config: WindConfig


def plant_damage(truth_gust, seed: int, fd_curve=FD_CURVE, co_curve=CO_CURVE) -> List[Damage]:
    """Damage labels from one uniform draw per tower.

    The same draw decides both states, so collapses are always a subset of
    functionality disruptions.
    """
    u = np.random.default_rng(seed).random(len(truth_gust))
    p_co = lognormal_cdf(truth_gust, *co_curve)
    p_fd = np.maximum(lognormal_cdf(truth_gust, *fd_curve), p_co)
    return [Damage.COLLAPSE if a < c else Damage.PARTIAL if a < d else Damage.NONE
            for a, c, d in zip(u, p_co, p_fd)]


def make_scenario(n_towers: int = 41_814, seed: int = 0, step_minutes: int = 15,
                  truth_config: WindConfig = FS_CONFIG) -> Scenario:
    """Track, towers and damage planted against the gusts of ``truth_config``."""
    track = synthetic_track()
    pos = synthetic_towers(track, n_towers, seed)
    towers = [TowerRecord(f"T{i:05d}", la, lo) for i, (la, lo) in enumerate(pos)]
    lat, lon = tower_arrays(towers)
    truth = gust_field_arrays(interpolate_track(track, step_minutes), truth_config, lat, lon)
    labels = plant_damage(truth, seed + 1)
    towers = [TowerRecord(t.id, t.lat, t.lon, None, None, d) for t, d in zip(towers, labels)]
    return Scenario(track, towers, truth, truth_config)
