"""Radial wind profiles and the surface 3-s gust at tower locations.

Per track step the gust pipeline is::

    sustained 3-min 10 m speed  x GF  ->  3-s gust at 10 m near the eye
                                / CF  ->  gradient-level maximum wind
    profile(r)                        ->  gradient-level wind at the tower
                                x CF  ->  3-s gust at 10 m at the tower

and the tower's gust is the maximum over all steps. No forward-motion
asymmetry or terrain correction is applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .ingest import KMH_PER_MS, Track, TowerRecord, tower_arrays

# Holland defaults used when the track carries no pressure information.
HOLLAND_B = 1.4
AIR_DENSITY = 1.15

# Willoughby et al. (2006) regressions are fit to storms up to roughly this
# gradient-level intensity; inputs above it reuse the shape at the cap.
WILLOUGHBY_VMAX_CAP = 90.0
WILLOUGHBY_X2_KM = 25.0


class CalibrationError(ValueError):
    """A profile calibration produced parameters outside their valid range."""


class Rwpm(str, Enum):
    WSE = "WSE"
    WDE = "WDE"
    HOL = "HOL"

    @property
    def code(self) -> int:
        return {"WSE": kernels.MODEL_WSE, "WDE": kernels.MODEL_WDE, "HOL": kernels.MODEL_HOL}[self.value]


@dataclass(frozen=True)
class WindConfig:
    model: Rwpm
    cf: float
    gf: float

    def __post_init__(self):
        object.__setattr__(self, "model", Rwpm(self.model))
        if not 0.0 < self.cf <= 1.0:
            raise ValueError(f"cf must lie in (0, 1], got {self.cf}")
        if not self.gf > 0.0:
            raise ValueError(f"gf must be positive, got {self.gf}")


@dataclass(frozen=True)
class WilloughbyParams:
    vmax_gradient: float
    rmax_km: float
    n_exp: float
    r1_km: float
    r2_km: float
    x1_km: float
    x2_km: float = WILLOUGHBY_X2_KM
    a_mix: float = 0.0

    def __post_init__(self):
        checks = [
            ("vmax_gradient", self.vmax_gradient > 0),
            ("n_exp", self.n_exp > 0),
            ("x1_km", self.x1_km > 0),
            ("x2_km", self.x2_km > 0),
            ("r1_km", 0 < self.r1_km < self.rmax_km),
            ("r2_km", self.rmax_km < self.r2_km),
            ("a_mix", 0.0 <= self.a_mix <= 1.0),
        ]
        for name, ok in checks:
            if not ok:
                raise CalibrationError(f"invalid Willoughby parameter {name}: {self}")

    def row(self):
        return [self.vmax_gradient, self.rmax_km, self.n_exp, self.x1_km,
                self.x2_km, self.a_mix, self.r1_km, self.r2_km]


@dataclass(frozen=True)
class HollandParams:
    a_scale: float
    b_scale: float
    delta_p: float
    rho: float = AIR_DENSITY

    def __post_init__(self):
        for name in ("a_scale", "b_scale", "delta_p", "rho"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise CalibrationError(f"invalid Holland parameter {name}={value}")

    @property
    def peak_radius_km(self) -> float:
        return self.a_scale ** (1.0 / self.b_scale)

    @property
    def peak_speed(self) -> float:
        return math.sqrt(self.b_scale * self.delta_p / (self.rho * math.e))


# -- profiles ---------------------------------------------------------------


def willoughby_profile(params: WilloughbyParams, double_exp: bool, r):
    """Sectionally continuous Willoughby profile at radius ``r`` (km), m/s.

    Power-law rise inside ``r1``, exponential decay outside ``r2`` (one or
    two e-folding lengths), and a polynomial blend between them.
    """
    out = kernels.willoughby_vec(r, *params.row(), bool(double_exp))
    return float(out) if np.ndim(out) == 0 else out


def holland_profile(params: HollandParams, r):
    """Holland gradient wind at radius ``r`` (km), m/s; zero at the eye."""
    out = kernels.holland_vec(r, params.a_scale, params.b_scale, params.delta_p, params.rho)
    return float(out) if np.ndim(out) == 0 else out


# -- calibration ------------------------------------------------------------


def _solve_ramp(target):
    """Invert the blend ramp by bisection (it is monotone on [0, 1])."""
    target = np.asarray(target, dtype=float)
    lo = np.zeros_like(target)
    hi = np.ones_like(target)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        below = kernels.ramp(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def willoughby_regression(vmax_gradient, eye_lat):
    """Rmax, X1, n and A from the Willoughby et al. (2006) regressions.

    ``vmax_gradient`` in m/s, latitude in degrees. Vectorised.
    """
    v = np.minimum(np.asarray(vmax_gradient, dtype=float), WILLOUGHBY_VMAX_CAP)
    lat = np.abs(np.asarray(eye_lat, dtype=float))
    rmax = 46.4 * np.exp(-0.0155 * v + 0.0169 * lat)
    x1 = 317.1 - 2.026 * v + 1.915 * lat
    n = 0.4067 + 0.0144 * v - 0.0038 * lat
    a = np.clip(0.0696 + 0.0049 * v - 0.0064 * lat, 0.0, 1.0)
    return rmax, x1, n, a


def willoughby_table(vmax_gradient, eye_lat, double_exp: bool) -> np.ndarray:
    """Calibrated Willoughby parameter rows, one per (vmax, lat) pair."""
    vmax = np.atleast_1d(np.asarray(vmax_gradient, dtype=float))
    lat = np.broadcast_to(np.atleast_1d(np.asarray(eye_lat, dtype=float)), vmax.shape)
    rmax, x1, n, a = willoughby_regression(vmax, lat)
    x2 = np.full_like(rmax, WILLOUGHBY_X2_KM)
    if not double_exp:
        a = np.zeros_like(a)
    # blend weight at which dV/dr vanishes exactly at rmax
    rise = n / rmax
    decay = (1.0 - a) / x1 + a / x2
    xi = _solve_ramp(rise / (rise + decay))
    width = np.where(rmax > 20.0, 25.0, 15.0)
    r1 = rmax - xi * width
    r2 = r1 + width
    table = np.column_stack([vmax, rmax, n, x1, x2, a, r1, r2])
    _check_willoughby_table(table)
    return table


def _check_willoughby_table(table):
    vmax, rmax, n, x1, x2, a, r1, r2 = table.T
    problems = [
        ("vmax_gradient", ~(vmax > 0)),
        ("n_exp", ~(n > 0)),
        ("x1_km", ~(x1 > 0)),
        ("r1_km", ~((r1 > 0) & (r1 < rmax))),
        ("r2_km", ~(r2 > rmax)),
        ("a_mix", ~((a >= 0) & (a <= 1))),
    ]
    for name, bad in problems:
        if np.any(bad):
            k = int(np.argmax(bad))
            raise CalibrationError(
                f"Willoughby calibration violates {name} at vmax={vmax[k]:.3f} m/s "
                f"(rmax={rmax[k]:.3f}, r1={r1[k]:.3f}, r2={r2[k]:.3f})"
            )


def calibrate_willoughby(vmax_gradient: float, eye_lat: float, double_exp: bool) -> WilloughbyParams:
    if not vmax_gradient > 0:
        raise CalibrationError(f"vmax_gradient must be positive, got {vmax_gradient}")
    vmax, rmax, n, x1, x2, a, r1, r2 = willoughby_table(vmax_gradient, eye_lat, double_exp)[0]
    return WilloughbyParams(
        vmax_gradient=float(vmax), rmax_km=float(rmax), n_exp=float(n), r1_km=float(r1),
        r2_km=float(r2), x1_km=float(x1), x2_km=float(x2), a_mix=float(a),
    )


def calibrate_holland(
    vmax_gradient: float,
    rmax_km: float,
    delta_p: Optional[float] = None,
    b_scale: float = HOLLAND_B,
    rho: float = AIR_DENSITY,
) -> HollandParams:
    """Holland parameters whose profile peaks at ``vmax_gradient`` on ``rmax_km``.

    Without a pressure deficit, ``B`` is fixed and the deficit follows from
    the peak-speed relation; with one, the deficit is kept and ``B`` is
    solved instead. ``A`` then places the peak at ``rmax_km``.
    """
    if not (vmax_gradient > 0 and rmax_km > 0):
        raise CalibrationError("vmax_gradient and rmax_km must be positive")
    if delta_p is None:
        b = float(b_scale)
        dp = rho * math.e * vmax_gradient**2 / b
    else:
        dp = float(delta_p)
        if not dp > 0:
            raise CalibrationError(f"delta_p must be positive, got {delta_p}")
        b = rho * math.e * vmax_gradient**2 / dp
    a = rmax_km**b
    if not (math.isfinite(a) and math.isfinite(b) and a > 0):
        raise CalibrationError(f"Holland calibration did not produce finite A, B ({a}, {b})")
    return HollandParams(a_scale=a, b_scale=b, delta_p=dp, rho=rho)


def holland_table(vmax_gradient, eye_lat, b_scale=HOLLAND_B, rho=AIR_DENSITY) -> np.ndarray:
    """Holland parameter rows; Rmax comes from the Willoughby regression."""
    vmax = np.atleast_1d(np.asarray(vmax_gradient, dtype=float))
    rmax = willoughby_regression(vmax, eye_lat)[0]
    dp = rho * math.e * vmax**2 / b_scale
    a = rmax**b_scale
    return np.column_stack([vmax, rmax, a, np.full_like(vmax, b_scale), dp,
                            np.full_like(vmax, rho), np.zeros_like(vmax), np.zeros_like(vmax)])


# -- gust pipeline ----------------------------------------------------------


def step_table(track: Track, config: WindConfig, holland_b=HOLLAND_B, rho=AIR_DENSITY):
    """Gradient-level parameter rows for every track step under ``config``."""
    lat, lon, vmax_kmh = track.arrays()
    vgrad = (vmax_kmh / KMH_PER_MS) * config.gf / config.cf
    if config.model is Rwpm.HOL:
        table = holland_table(vgrad, lat, holland_b, rho)
    else:
        table = willoughby_table(vgrad, lat, config.model is Rwpm.WDE)
    return lat, lon, table


def gust_field_arrays(track: Track, config: WindConfig, tower_lat, tower_lon,
                      holland_b=HOLLAND_B, rho=AIR_DENSITY, jit=None) -> np.ndarray:
    """Peak 3-s gust (km/h) at each (lat, lon) over the whole track."""
    if track is None or len(track) == 0:
        raise ValueError("empty track")
    lat, lon, table = step_table(track, config, holland_b, rho)
    vgrad = kernels.max_gradient_wind(lat, lon, table, config.model.code,
                                      tower_lat, tower_lon, jit=jit)
    return vgrad * (config.cf * KMH_PER_MS)


def gust_at_point(track: Track, config: WindConfig, point: Sequence[float], **kw) -> float:
    """Peak 3-s gust at 10 m (km/h) at a single ``(lat, lon)``."""
    la, lo = point
    return float(gust_field_arrays(track, config, np.array([la]), np.array([lo]), **kw)[0])


def gust_field(track: Track, config: WindConfig, towers: Sequence[TowerRecord], **kw) -> np.ndarray:
    """Peak 3-s gust (km/h) per tower, in input order."""
    lat, lon = tower_arrays(towers)
    return gust_field_arrays(track, config, lat, lon, **kw)
