"""Bounding-EDP fragility fitting.

Towers are sorted by gust, split into equal-count bins, and a two-parameter
CDF is fitted to the per-bin failure ratios by least squares. Replicate
fits are then summarised by pointwise probability percentiles, each refitted
with a lognormal.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammainc, ndtr

log = logging.getLogger(__name__)

DEFAULT_BINS = 30
DEFAULT_PERCENTILES = (2.5, 16.0, 50.0, 84.0, 97.5)
SIMPLEX_TOL = 1e-10
MAX_ITER = 10_000
INIT_BETA = 0.1
TIE_TOL = 1e-15


class FitError(RuntimeError):
    """A fit needed downstream did not converge."""


class Family(str, Enum):
    LOGNORMAL = "LO"
    NORMAL = "NO"
    CAUCHY = "CA"
    GAMMA = "GA"
    WEIBULL = "WE"


# preference order when SSEs tie
TIE_ORDER = (Family.LOGNORMAL, Family.NORMAL, Family.GAMMA, Family.WEIBULL, Family.CAUCHY)


def lognormal_cdf(im, x_m: float, beta: float):
    """Probability of reaching the damage state at intensity ``im``.

    ``Phi(ln(im / x_m) / beta)``, with ``F(0) = 0``.
    """
    if not (x_m > 0 and beta > 0):
        raise ValueError(f"x_m and beta must be positive, got {x_m}, {beta}")
    im = np.asarray(im, dtype=float)
    if np.any(im < 0):
        raise ValueError("intensity must be nonnegative")
    with np.errstate(divide="ignore"):
        z = np.log(im / x_m) / beta
    out = ndtr(z)
    return float(out) if out.ndim == 0 else out


def family_cdf(family: Family, x, p1: float, p2: float):
    """CDF of ``family`` with its native parameters at ``x``.

    ========= ============ ============
    family    p1           p2
    ========= ============ ============
    LO        median       log-std
    NO        mean         std
    CA        location     scale
    GA        shape        scale
    WE        shape        scale
    ========= ============ ============
    """
    x = np.asarray(x, dtype=float)
    if family is Family.LOGNORMAL:
        with np.errstate(divide="ignore"):
            return ndtr(np.log(np.maximum(x, 0.0) / p1) / p2)
    if family is Family.NORMAL:
        return ndtr((x - p1) / p2)
    if family is Family.CAUCHY:
        return 0.5 + np.arctan((x - p1) / p2) / math.pi
    if family is Family.GAMMA:
        return gammainc(p1, np.maximum(x, 0.0) / p2)
    if family is Family.WEIBULL:
        return -np.expm1(-((np.maximum(x, 0.0) / p2) ** p1))
    raise ValueError(f"unknown family {family}")


@dataclass
class BinTable:
    mean_gust: np.ndarray
    n_towers: np.ndarray
    n_failed: np.ndarray

    @property
    def failure_ratio(self) -> np.ndarray:
        return self.n_failed / self.n_towers

    @property
    def n_bins(self) -> int:
        return len(self.n_towers)

    def rows(self):
        return list(zip(self.mean_gust.tolist(), self.n_towers.tolist(),
                        self.n_failed.tolist(), self.failure_ratio.tolist()))


def bin_towers(gusts, failed, n_bins: int = DEFAULT_BINS) -> BinTable:
    """Equal-count bins over towers sorted by gust.

    Ties keep input order. With ``N = q*n + rem`` the first ``rem`` bins hold
    ``q + 1`` towers and the rest ``q``.
    """
    gusts = np.asarray(gusts, dtype=float)
    failed = np.asarray(failed, dtype=bool)
    if gusts.shape != failed.shape or gusts.ndim != 1:
        raise ValueError("gusts and failed must be 1-d and the same length")
    n = gusts.shape[0]
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    if n_bins > n:
        raise ValueError(f"n_bins={n_bins} exceeds the number of towers ({n})")
    order = np.argsort(gusts, kind="stable")
    g = gusts[order]
    f = failed[order].astype(np.int64)
    q, rem = divmod(n, n_bins)
    sizes = np.full(n_bins, q, dtype=np.int64)
    sizes[:rem] += 1
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    return BinTable(
        mean_gust=np.add.reduceat(g, starts) / sizes,
        n_towers=sizes,
        n_failed=np.add.reduceat(f, starts),
    )


@dataclass
class FragilityFit:
    family: Family
    params: tuple
    sse: float
    converged: bool
    n_iter: int = 0

    @property
    def x_m(self) -> float:
        if self.family is not Family.LOGNORMAL:
            raise AttributeError("x_m is defined for lognormal fits only")
        return self.params[0]

    @property
    def beta(self) -> float:
        if self.family is not Family.LOGNORMAL:
            raise AttributeError("beta is defined for lognormal fits only")
        return self.params[1]

    def cdf(self, im):
        return family_cdf(self.family, im, *self.params)


def sse(bins: BinTable, fit: FragilityFit) -> float:
    """Sum of squared differences between bin failure ratios and the fitted CDF."""
    resid = bins.failure_ratio - fit.cdf(bins.mean_gust)
    return float(np.dot(resid, resid))


def _initial_lognormal(x, y):
    hit = np.nonzero(y >= 0.5)[0]
    x_m = float(x[hit[0]]) if hit.size else float(np.max(x))
    return x_m, INIT_BETA


def _initial_params(family, x, y):
    x_m, beta = _initial_lognormal(x, y)
    if family is Family.LOGNORMAL:
        return x_m, beta
    if family is Family.NORMAL:
        return x_m, beta * x_m
    if family is Family.CAUCHY:
        return x_m, beta * x_m
    if family is Family.GAMMA:
        k = 1.0 / beta**2
        return k, x_m / k
    if family is Family.WEIBULL:
        k = 1.2825 / beta
        return k, x_m / math.log(2.0) ** (1.0 / k)
    raise ValueError(family)


def fit_points(x, y, family: Family = Family.LOGNORMAL,
               tol: float = SIMPLEX_TOL, max_iter: int = MAX_ITER) -> FragilityFit:
    """Least-squares fit of ``family`` to points ``(x, y)``.

    Nelder-Mead on the logarithms of both parameters, started from the
    lognormal heuristic (median at the first point with ``y >= 0.5``,
    log-std 0.1) mapped into each family's parametrisation.
    """
    family = Family(family)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p0 = _initial_params(family, x, y)
    if not np.any(y > 0):
        resid = y - family_cdf(family, x, *p0)
        log.debug("no failures in data; %s fit not attempted", family.value)
        return FragilityFit(family, p0, float(resid @ resid), False, 0)

    def objective(theta):
        with np.errstate(over="ignore", invalid="ignore"):
            r = y - family_cdf(family, x, math.exp(theta[0]), math.exp(theta[1]))
        val = float(r @ r)
        return val if math.isfinite(val) else 1e300

    t0 = np.log(p0)
    simplex = np.array([t0, t0 + [0.05, 0.0], t0 + [0.0, 0.05]])
    res = minimize(
        objective, t0, method="Nelder-Mead",
        options=dict(initial_simplex=simplex, xatol=tol, fatol=np.inf,
                     maxiter=max_iter, maxfev=4 * max_iter),
    )
    params = (float(math.exp(res.x[0])), float(math.exp(res.x[1])))
    spread = float(np.max(np.abs(res.final_simplex[0][1:] - res.final_simplex[0][0])))
    converged = bool(res.success and spread <= tol)
    if not converged:
        log.debug("%s fit did not converge: %s", family.value, res.message)
    return FragilityFit(family, params, float(res.fun), converged, int(res.nit))


def fit_cdf(bins: BinTable, family: Family = Family.LOGNORMAL, **kw) -> FragilityFit:
    if bins.n_bins < 3:
        raise ValueError("at least 3 bins are needed for a two-parameter fit")
    return fit_points(bins.mean_gust, bins.failure_ratio, family, **kw)


# -- distribution selection -------------------------------------------------


@dataclass
class SelectionReport:
    families: tuple
    sse: np.ndarray                 # (n_datasets, n_families)
    winners: List[Optional[Family]]
    ties: List[int] = field(default_factory=list)
    flagged: List[int] = field(default_factory=list)

    @property
    def wins(self) -> Dict[Family, int]:
        counts = {f: 0 for f in self.families}
        for w in self.winners:
            if w is not None:
                counts[w] += 1
        return counts

    def summary(self):
        """Per family: ``(wins, mean SSE, 16th, 84th percentile SSE)``."""
        wins = self.wins
        rows = []
        for j, fam in enumerate(self.families):
            col = self.sse[:, j]
            col = col[np.isfinite(col)]
            rows.append((fam, wins[fam], float(col.mean()),
                         float(np.percentile(col, 16)), float(np.percentile(col, 84))))
        return rows


def select_distribution(bins_list: Sequence[BinTable],
                        families: Sequence[Family] = TIE_ORDER) -> SelectionReport:
    """Fit every family to every dataset and count min-SSE winners.

    Datasets where any fit fails to converge are flagged and left out of the
    win counts. SSEs within ``TIE_TOL`` of the minimum are resolved by
    ``TIE_ORDER`` and recorded as ties.
    """
    if len(bins_list) < 1:
        raise ValueError("at least one dataset is required")
    families = tuple(Family(f) for f in families)
    rank = {f: TIE_ORDER.index(f) for f in families}
    table = np.empty((len(bins_list), len(families)))
    winners, ties, flagged = [], [], []
    for i, bins in enumerate(bins_list):
        fits = [fit_cdf(bins, f) for f in families]
        table[i] = [f.sse for f in fits]
        if not all(f.converged for f in fits):
            flagged.append(i)
            winners.append(None)
            continue
        best = table[i].min()
        near = [f for f, s in zip(families, table[i]) if s - best <= TIE_TOL]
        if len(near) > 1:
            ties.append(i)
        winners.append(min(near, key=rank.__getitem__))
    return SelectionReport(families, table, winners, ties, flagged)


# -- percentile curves ------------------------------------------------------


def im_grid(start: float = 150.0, stop: float = 450.0, step: float = 1.0) -> np.ndarray:
    n = int(round((stop - start) / step))
    return start + step * np.arange(n + 1)


def pointwise_percentile_curves(fits: Sequence[FragilityFit], percentiles, grid) -> np.ndarray:
    """``(len(percentiles), len(grid))`` percentiles of F(im) across the fits."""
    grid = np.asarray(grid, dtype=float)
    curves = np.vstack([f.cdf(grid) for f in fits])
    return np.percentile(curves, np.asarray(percentiles, dtype=float), axis=0)


@dataclass(frozen=True)
class PercentileRow:
    percentile: float
    x_m: float
    beta: float
    sse: float
    converged: bool


def percentile_curves(fits: Sequence[FragilityFit], percentiles=DEFAULT_PERCENTILES,
                      grid=None, min_fits: int = 30) -> List[PercentileRow]:
    """Lognormal refits of the pointwise percentile curves of replicate fits.

    Low probability percentiles sit to the right, so their medians are the
    largest.
    """
    good = [f for f in fits if f.converged]
    if len(good) < min_fits:
        raise FitError(f"need at least {min_fits} converged fits, got {len(good)} of {len(fits)}")
    grid = im_grid() if grid is None else np.asarray(grid, dtype=float)
    curves = pointwise_percentile_curves(good, percentiles, grid)
    rows = []
    for q, curve in zip(percentiles, curves):
        fit = fit_points(grid, curve, Family.LOGNORMAL)
        if not fit.converged:
            raise FitError(
                f"refit of the {q}th percentile curve did not converge "
                f"(x_m={fit.params[0]:.4g}, beta={fit.params[1]:.4g}, sse={fit.sse:.3g}, "
                f"iterations={fit.n_iter})"
            )
        rows.append(PercentileRow(float(q), fit.x_m, fit.beta, fit.sse, fit.converged))
    return rows


def bin_convergence(gusts, failed, n_values: Sequence[int]):
    """Lognormal parameters as a function of the number of bins.

    Returns rows ``(n, x_m, beta, sse, converged)``.
    """
    out = []
    for n in n_values:
        fit = fit_cdf(bin_towers(gusts, failed, int(n)), Family.LOGNORMAL)
        out.append((int(n), fit.x_m, fit.beta, fit.sse, fit.converged))
    return out


# -- literature curves -------------------------------------------------------


@dataclass(frozen=True)
class ReferenceCurve:
    source: str
    x_m: float
    beta: float


LITERATURE_CURVES = (
    ReferenceCurve("Quanta Technology (2009)", 284.0, 0.035),
    ReferenceCurve("Panteli et al. (2017)", 294.0, 0.25),
    ReferenceCurve("Fu et al. (2019)", 223.5, 0.04),
)


def reference_curves(collapse: Optional[PercentileRow] = None,
                     disruption: Optional[PercentileRow] = None) -> List[ReferenceCurve]:
    """Published transmission-tower fragility curves plus this run's medians."""
    rows = list(LITERATURE_CURVES)
    if collapse is not None:
        rows.append(ReferenceCurve("50th percentile - CO", collapse.x_m, collapse.beta))
    if disruption is not None:
        rows.append(ReferenceCurve("50th percentile - FD", disruption.x_m, disruption.beta))
    return rows
