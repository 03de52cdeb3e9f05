"""Hot loops for the gust field.

Each kernel exists twice: a scalar-loop version compiled with numba and a
vectorised numpy version. :func:`max_gradient_wind` dispatches on
:func:`cyclofrag._jit.use_jit`; both paths are importable directly so
tests and the benchmark can compare them.

Parameter tables hold one row per track step with ``N_PARAMS`` columns:

* Willoughby: ``vmax, rmax, n, x1, x2, a, r1, r2``
* Holland:    ``vmax, rmax, A, B, dp, rho, 0, 0``

Radii are km, speeds m/s, pressure Pa.
"""

import math

import numpy as np

from ._jit import jit, use_jit

N_PARAMS = 8
MODEL_WSE = 0
MODEL_WDE = 1
MODEL_HOL = 2

_R_EARTH = 6371.0
_DEG = math.pi / 180.0


# -- numba path --------------------------------------------------------------


@jit
def _ramp_scalar(xi):
    return xi**5 * (126.0 + xi * (-420.0 + xi * (540.0 + xi * (-315.0 + 70.0 * xi))))


@jit
def _willoughby_scalar(r, vmax, rmax, n, x1, x2, a, r1, r2, double):
    if r <= 0.0:
        return 0.0
    vi = vmax * (r / rmax) ** n
    if r < r1:
        return vi
    if double:
        vo = vmax * ((1.0 - a) * math.exp(-(r - rmax) / x1) + a * math.exp(-(r - rmax) / x2))
    else:
        vo = vmax * math.exp(-(r - rmax) / x1)
    if r > r2:
        return vo
    w = _ramp_scalar((r - r1) / (r2 - r1))
    return vi * (1.0 - w) + vo * w


@jit
def _holland_scalar(r, a_scale, b_scale, dp, rho):
    if r <= 0.0:
        return 0.0
    rb = r**b_scale
    return math.sqrt(a_scale * b_scale * dp * math.exp(-a_scale / rb) / (rho * rb))


@jit
def _profile_scalar(r, row, model):
    if model == MODEL_HOL:
        return _holland_scalar(r, row[2], row[3], row[4], row[5])
    return _willoughby_scalar(
        r, row[0], row[1], row[2], row[3], row[4], row[5], row[6], row[7], model == MODEL_WDE
    )


# radial grid for the per-step skip bound
_BOUND_DR = 2.0
_BOUND_N = 2048
_BOUND_MIN_TOWERS = 256


@jit
def _bound_table(table, model):
    """Profile values on a radial grid, one row per step.

    Past ``r_mono`` the profile decreases, so the value at a grid radius
    bounds the profile at every larger radius.
    """
    nsteps = table.shape[0]
    out = np.empty((nsteps, _BOUND_N))
    for s in range(nsteps):
        for i in range(_BOUND_N):
            out[s, i] = _profile_scalar(i * _BOUND_DR, table[s], model)
    return out


@jit
def _max_gradient_wind_loop(eye_lat, eye_lon, table, model, tower_lat, tower_lon):
    nsteps = eye_lat.shape[0]
    ntow = tower_lat.shape[0]
    out = np.zeros(ntow)
    # half-angle sines/cosines so sin((a - b) / 2) needs no trig per pair
    sp_e = np.empty(nsteps)
    cp_e = np.empty(nsteps)
    sl_e = np.empty(nsteps)
    cl_e = np.empty(nsteps)
    cos_e = np.empty(nsteps)
    # beyond r_mono each step's profile decreases monotonically
    r_mono = np.empty(nsteps)
    for s in range(nsteps):
        ph = 0.5 * eye_lat[s] * _DEG
        lh = 0.5 * eye_lon[s] * _DEG
        sp_e[s] = math.sin(ph)
        cp_e[s] = math.cos(ph)
        sl_e[s] = math.sin(lh)
        cl_e[s] = math.cos(lh)
        cos_e[s] = math.cos(2.0 * ph)
        r_mono[s] = table[s, 1] if model == MODEL_HOL else table[s, 7]
    skip = ntow >= _BOUND_MIN_TOWERS
    if skip:
        bound = _bound_table(table, model)
    else:
        bound = np.empty((0, 0))
    two_r = 2.0 * _R_EARTH
    for j in range(ntow):
        ph = 0.5 * tower_lat[j] * _DEG
        lh = 0.5 * tower_lon[j] * _DEG
        sp_t = math.sin(ph)
        cp_t = math.cos(ph)
        sl_t = math.sin(lh)
        cl_t = math.cos(lh)
        cos_t = math.cos(2.0 * ph)
        # seed with the step closest in latitude so the skip test bites early
        first = 0
        dmin = abs(tower_lat[j] - eye_lat[0])
        for s in range(1, nsteps):
            d = abs(tower_lat[j] - eye_lat[s])
            if d < dmin:
                dmin = d
                first = s
        best = 0.0
        for k in range(nsteps + 1):
            s = first if k == 0 else k - 1
            if k > 0 and s == first:
                continue
            a = sp_t * cp_e[s] - cp_t * sp_e[s]
            b = sl_t * cl_e[s] - cl_t * sl_e[s]
            h = a * a + cos_e[s] * cos_t * b * b
            if h > 1.0:
                h = 1.0
            sh = math.sqrt(h)
            if skip and best > 0.0:
                # asin(y) >= y, and the grid value below r_lb bounds the decaying tail
                r_lb = two_r * sh
                i = int(r_lb / _BOUND_DR)
                if i >= _BOUND_N:
                    i = _BOUND_N - 1
                if i * _BOUND_DR > r_mono[s] and bound[s, i] <= best:
                    continue
            r = two_r * math.asin(sh)
            v = _profile_scalar(r, table[s], model)
            if v > best:
                best = v
        out[j] = best
    return out


# -- numpy path --------------------------------------------------------------


def ramp(xi):
    """Polynomial blend weight rising smoothly from 0 at ``xi=0`` to 1 at ``xi=1``."""
    xi = np.asarray(xi, dtype=float)
    return xi**5 * (126.0 + xi * (-420.0 + xi * (540.0 + xi * (-315.0 + 70.0 * xi))))


def willoughby_vec(r, vmax, rmax, n, x1, x2, a, r1, r2, double):
    r = np.asarray(r, dtype=float)
    rc = np.maximum(r, 0.0)
    vi = vmax * (rc / rmax) ** n
    if double:
        vo = vmax * ((1.0 - a) * np.exp(-(rc - rmax) / x1) + a * np.exp(-(rc - rmax) / x2))
    else:
        vo = vmax * np.exp(-(rc - rmax) / x1)
    xi = np.clip((rc - r1) / (r2 - r1), 0.0, 1.0)
    w = ramp(xi)
    v = np.where(rc < r1, vi, np.where(rc > r2, vo, vi * (1.0 - w) + vo * w))
    return np.where(r <= 0.0, 0.0, v)


def holland_vec(r, a_scale, b_scale, dp, rho):
    r = np.asarray(r, dtype=float)
    pos = r > 0.0
    rb = np.where(pos, r, 1.0) ** b_scale
    with np.errstate(over="ignore", under="ignore"):
        v = np.sqrt(a_scale * b_scale * dp * np.exp(-a_scale / rb) / (rho * rb))
    return np.where(pos, v, 0.0)


def profile_vec(r, row, model):
    if model == MODEL_HOL:
        return holland_vec(r, row[2], row[3], row[4], row[5])
    return willoughby_vec(r, *row[:8], model == MODEL_WDE)


def _haversine(lat1, lon1, lat2, lon2):
    p1 = lat1 * _DEG
    p2 = lat2 * _DEG
    sdp = np.sin((p2 - p1) / 2.0)
    sdl = np.sin((lon2 - lon1) * _DEG / 2.0)
    h = np.minimum(sdp * sdp + np.cos(p1) * np.cos(p2) * sdl * sdl, 1.0)
    return 2.0 * _R_EARTH * np.arcsin(np.sqrt(h))


def _max_gradient_wind_numpy(eye_lat, eye_lon, table, model, tower_lat, tower_lon):
    best = np.zeros(tower_lat.shape[0])
    for s in range(eye_lat.shape[0]):
        r = _haversine(eye_lat[s], eye_lon[s], tower_lat, tower_lon)
        np.maximum(best, profile_vec(r, table[s], model), out=best)
    return best


def max_gradient_wind(eye_lat, eye_lon, table, model, tower_lat, tower_lon, jit=None):
    """Per-tower maximum over track steps of the gradient-level profile speed.

    ``jit=None`` follows the package-wide switch; ``True``/``False`` force a path.
    """
    if int(model) not in (MODEL_WSE, MODEL_WDE, MODEL_HOL):
        raise ValueError(f"unknown profile model code {model}")
    table = np.asarray(table, dtype=float)
    if table.ndim != 2 or table.shape[1] != N_PARAMS or table.shape[0] != np.size(eye_lat):
        raise ValueError("table must hold one parameter row per track step")
    args = (
        np.ascontiguousarray(eye_lat, dtype=float),
        np.ascontiguousarray(eye_lon, dtype=float),
        np.ascontiguousarray(table, dtype=float),
        int(model),
        np.ascontiguousarray(tower_lat, dtype=float),
        np.ascontiguousarray(tower_lon, dtype=float),
    )
    if jit is None:
        jit = use_jit()
    if jit:
        if not use_jit():
            raise RuntimeError("numba kernels are disabled")
        return _max_gradient_wind_loop(*args)
    return _max_gradient_wind_numpy(*args)
