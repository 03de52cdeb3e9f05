"""Epistemic uncertainty: LHS over (profile model, CF, GF), per-tower wind
ensembles, and the intensity-measure / finite-sample / combined replicates.

All randomness is derived from a master seed with :func:`derive_seed`, so
every replicate is reproducible on its own and independent of the order
(or process) in which it is generated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .ingest import Track, TowerRecord, tower_arrays
from .windfield import Rwpm, WindConfig, gust_field_arrays

log = logging.getLogger(__name__)

GF_MEAN = 1.58
GF_SD = 0.10
CF_CHOICES = (0.75, 0.80, 0.90)
MODEL_CHOICES = (Rwpm.WSE, Rwpm.WDE, Rwpm.HOL)
FS_CONFIG = WindConfig(Rwpm.WDE, 0.90, 1.58)

_PROB_CLAMP = 1e-12

# stream identifiers for derive_seed
STREAM_LHS = 1
STREAM_IM = 2
STREAM_BOOTSTRAP_FS = 3
STREAM_BOOTSTRAP_COMBINED = 4


class Mode(str, Enum):
    IM = "IM"
    FS = "FS"
    COMBINED = "Combined"


def derive_seed(master: int, *keys: int) -> np.random.SeedSequence:
    """Child seed for ``(master, *keys)``; stable across runs and workers."""
    return np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(k) for k in keys))


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class LhsDesign:
    rows: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    def __len__(self):
        return self.n_rows

    def __iter__(self):
        return iter(self.rows)


def lhs_design(n_rows: int = 1000, seed=0, n_cols: int = 3) -> LhsDesign:
    """Latin hypercube on the open unit cube.

    Each column holds one point per stratum ``[k/n, (k+1)/n)``, placed
    uniformly at random inside its stratum; strata are shuffled
    independently per column.
    """
    if n_rows < 1:
        raise ValueError("n_rows must be >= 1")
    rng = _rng(seed)
    rows = np.empty((n_rows, n_cols))
    for c in range(n_cols):
        perm = rng.permutation(n_rows)
        u = rng.random(n_rows)
        u[u == 0.0] = 0.5  # keep the open interval
        rows[:, c] = (perm + u) / n_rows
    return LhsDesign(rows)


def _third(r):
    if r <= 1.0 / 3.0:
        return 0
    if r <= 2.0 / 3.0:
        return 1
    return 2


def decode_config(r1: float, r2: float, r3: float) -> WindConfig:
    """Map three unit-interval numbers to a wind-model configuration.

    Thirds of ``r1`` pick WSE/WDE/HOL and thirds of ``r2`` pick CF 0.75/0.80/0.90
    (intervals closed on the right); ``r3`` is pushed through the inverse
    normal CDF with mean 1.58 and sd 0.1 to give the gust factor.
    """
    for name, r in (("r1", r1), ("r2", r2), ("r3", r3)):
        if not 0.0 < r < 1.0:
            raise ValueError(f"{name} must lie in (0, 1), got {r}")
    p = min(max(r3, _PROB_CLAMP), 1.0 - _PROB_CLAMP)
    gf = GF_MEAN + GF_SD * float(ndtri(p))
    return WindConfig(MODEL_CHOICES[_third(r1)], CF_CHOICES[_third(r2)], gf)


@dataclass
class WindEnsemble:
    tower_id: str
    samples: np.ndarray
    ecdf: np.ndarray = field(init=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        self.ecdf = np.sort(self.samples)


class EnsembleSet:
    """Per-tower wind ensembles stored as one ``(n_towers, n_samples)`` matrix.

    Iterating or indexing yields :class:`WindEnsemble` views; the replicate
    machinery works on the sorted matrix directly.
    """

    def __init__(self, tower_ids: Sequence[str], samples: np.ndarray):
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 2 or samples.shape[0] != len(tower_ids):
            raise ValueError("samples must be (n_towers, n_samples)")
        self.tower_ids = list(tower_ids)
        self.samples = samples
        self.sorted = np.sort(samples, axis=1)

    def __len__(self):
        return len(self.tower_ids)

    def __getitem__(self, i) -> WindEnsemble:
        return WindEnsemble(self.tower_ids[i], self.samples[i])

    def __iter__(self) -> Iterator[WindEnsemble]:
        for i in range(len(self)):
            yield self[i]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def quantile(self, p) -> np.ndarray:
        """Per-tower quantile at probability ``p`` (linear order-statistic rule)."""
        return sorted_quantile(self.sorted, p)

    def summary(self, probs=(0.5, 0.16, 0.84)) -> np.ndarray:
        return np.column_stack([self.quantile(p) for p in probs])


def sorted_quantile(sorted_rows: np.ndarray, p: float) -> np.ndarray:
    """Quantile of each row of an already-sorted matrix at position ``(n-1)p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    n = sorted_rows.shape[-1]
    if n == 0:
        raise ValueError("empty ensemble")
    h = (n - 1) * p
    lo = int(np.floor(h))
    hi = min(lo + 1, n - 1)
    frac = h - lo
    a = sorted_rows[..., lo]
    b = sorted_rows[..., hi]
    return a + frac * (b - a)


def ecdf_quantile(ensemble: WindEnsemble, p: float) -> float:
    if len(ensemble.ecdf) == 0:
        raise ValueError("empty ensemble")
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    return float(sorted_quantile(ensemble.ecdf, p))


def ensemble_samples(design: LhsDesign, track: Track, tower_lat, tower_lon,
                     rows: Optional[Sequence[int]] = None, **wind_kw) -> np.ndarray:
    """Gust matrix ``(n_towers, len(rows))`` for the selected design rows."""
    rows = range(design.n_rows) if rows is None else rows
    cols = []
    for i in rows:
        cfg = decode_config(*design.rows[i])
        cols.append(gust_field_arrays(track, cfg, tower_lat, tower_lon, **wind_kw))
    return np.column_stack(cols) if cols else np.empty((len(tower_lat), 0))


def build_ensembles(design: LhsDesign, track: Track, towers: Sequence[TowerRecord],
                    **wind_kw) -> EnsembleSet:
    """One gust field per design row, transposed into per-tower ensembles."""
    lat, lon = tower_arrays(towers)
    samples = ensemble_samples(design, track, lat, lon, **wind_kw)
    return EnsembleSet([t.id for t in towers], samples)


@dataclass
class Replicate:
    wind: np.ndarray
    towers: np.ndarray
    mode: Mode
    r: Optional[float] = None

    def __post_init__(self):
        if self.towers.shape[0] != self.wind.shape[0]:
            raise ValueError("index multiset must match the tower count")

    def resampled(self, values: np.ndarray) -> np.ndarray:
        """``values`` (one per original tower) gathered through the bootstrap."""
        return np.asarray(values)[self.towers]

    @property
    def winds(self) -> np.ndarray:
        return self.wind[self.towers]


def im_replicate(ensembles: EnsembleSet, r: float) -> Replicate:
    """Every tower read at the same percentile ``r`` of its own ECDF."""
    if not 0.0 < r < 1.0:
        raise ValueError(f"r must lie in (0, 1), got {r}")
    wind = ensembles.quantile(r)
    return Replicate(wind, np.arange(len(wind)), Mode.IM, r)


def bootstrap_indices(n: int, seed) -> np.ndarray:
    """``n`` draws with replacement from ``range(n)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return _rng(seed).integers(0, n, size=n)


def fs_replicate(towers: Sequence[TowerRecord], fixed_config: WindConfig = FS_CONFIG,
                 track: Optional[Track] = None, seed=0, wind: Optional[np.ndarray] = None,
                 **wind_kw) -> Replicate:
    """Bootstrap of the towers under one fixed wind configuration.

    Pass a precomputed ``wind`` to avoid recomputing the same field for
    every replicate.
    """
    if wind is None:
        if track is None:
            raise ValueError("either track or wind is required")
        lat, lon = tower_arrays(towers)
        wind = gust_field_arrays(track, fixed_config, lat, lon, **wind_kw)
    wind = np.asarray(wind, dtype=float)
    if wind.shape[0] != len(towers):
        raise ValueError("wind vector length must match the tower count")
    return Replicate(wind, bootstrap_indices(len(wind), seed), Mode.FS)


def combined_replicate(ensembles: EnsembleSet, r: float, seed, bootstrap: bool = True) -> Replicate:
    rep = im_replicate(ensembles, r)
    idx = bootstrap_indices(len(rep.wind), seed) if bootstrap else np.arange(len(rep.wind))
    return Replicate(rep.wind, idx, Mode.COMBINED, r)


def replicate_percentiles(n: int, seed: int) -> np.ndarray:
    """The shared percentiles for ``n`` IM/combined replicates, in (0, 1)."""
    u = _rng(derive_seed(seed, STREAM_IM)).random(n)
    return np.clip(u, _PROB_CLAMP, 1.0 - _PROB_CLAMP)


def make_replicate(mode: Mode, i: int, seed: int, *, ensembles: Optional[EnsembleSet] = None,
                   fs_wind: Optional[np.ndarray] = None,
                   percentiles: Optional[np.ndarray] = None) -> Replicate:
    """Replicate ``i`` of ``mode`` under master ``seed``.

    The result depends only on ``(mode, i, seed)`` and the inputs, never on
    which other replicates were built before it.
    """
    mode = Mode(mode)
    if mode is Mode.FS:
        idx = bootstrap_indices(len(fs_wind), derive_seed(seed, STREAM_BOOTSTRAP_FS, i))
        return Replicate(np.asarray(fs_wind, dtype=float), idx, Mode.FS)
    r = float(percentiles[i])
    if mode is Mode.IM:
        return im_replicate(ensembles, r)
    return combined_replicate(ensembles, r, derive_seed(seed, STREAM_BOOTSTRAP_COMBINED, i))
