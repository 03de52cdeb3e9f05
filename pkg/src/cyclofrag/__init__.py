"""Cyclone wind fields at assets, epistemic uncertainty, and empirical fragility curves."""

__version__ = "0.1.0"

from .fragility import Family, FragilityFit, bin_towers, fit_cdf, lognormal_cdf, percentile_curves  # noqa: E402
from .ingest import DamageState, Track, TowerRecord, parse_towers, parse_track  # noqa: E402
from .windfield import Rwpm, WindConfig, gust_field  # noqa: E402

__all__ = [
    "__version__",
    "DamageState",
    "Family",
    "FragilityFit",
    "Rwpm",
    "TowerRecord",
    "Track",
    "WindConfig",
    "bin_towers",
    "fit_cdf",
    "gust_field",
    "lognormal_cdf",
    "parse_towers",
    "parse_track",
    "percentile_curves",
]
