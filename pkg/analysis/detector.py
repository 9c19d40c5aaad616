"""
Regional Anomaly Detector
Mean WPE profile of a region, per-site correlation with it, outlier verdicts
and localisation of the windows where a site's profile departs from the mean.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from analysis.errors import ContractViolation
from analysis.profiler import WpeProfile
from utils.ingest import GenerationSeries
from utils.performance_tracker import track_performance

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.8
DEFAULT_BAND = 2.0
MIN_JOINT_POINTS = 3
MAX_UNDEFINED_FRACTION = 0.25
MIN_SITES_FIXED = 2
MIN_SITES_IQR = 8


class Verdict(Enum):
    NORMAL = "normal"
    ANOMALOUS = "anomalous"
    INSUFFICIENT = "insufficient"

    @property
    def flagged(self) -> bool:
        # insufficient sites are anomalous by default
        return self is not Verdict.NORMAL


class RuleKind(Enum):
    FIXED_THRESHOLD = "fixed"
    IQR_OUTLIER = "iqr"


class Direction(Enum):
    BELOW_MEAN = "below_mean"
    ABOVE_MEAN = "above_mean"
    MIXED = "mixed"
    NONE = "none"


class CorrelationMethod(Enum):
    PEARSON = "pearson"
    SPEARMAN = "spearman"


@dataclass(frozen=True)
class DetectionRule:
    kind: RuleKind = RuleKind.FIXED_THRESHOLD
    threshold: float = DEFAULT_THRESHOLD

    @classmethod
    def fixed(cls, threshold: float = DEFAULT_THRESHOLD) -> "DetectionRule":
        return cls(RuleKind.FIXED_THRESHOLD, threshold)

    @classmethod
    def iqr(cls) -> "DetectionRule":
        return cls(RuleKind.IQR_OUTLIER, DEFAULT_THRESHOLD)

    def describe(self) -> str:
        if self.kind is RuleKind.FIXED_THRESHOLD:
            return f"fixed_threshold({self.threshold})"
        return "iqr_outlier"


@dataclass
class AnomalyLocalization:
    site_id: str
    divergent_windows: List[Tuple[str, float]] = field(default_factory=list)
    direction: Direction = Direction.NONE

    @property
    def window_starts(self) -> List[str]:
        return [start for start, _ in self.divergent_windows]


@dataclass
class RegionAnalysis:
    region_id: str
    mean_profile: WpeProfile
    correlations: Dict[str, Optional[float]]
    verdicts: Dict[str, Verdict]
    rule: DetectionRule
    method: CorrelationMethod = CorrelationMethod.PEARSON

    @property
    def flagged_sites(self) -> List[str]:
        return sorted(site for site, verdict in self.verdicts.items() if verdict.flagged)


@dataclass
class GenerationSummary:
    """Span-mean per-unit generation per site with regional context"""
    site_means: Dict[str, float]
    mean: float
    median: float
    q1: float
    q3: float

    def within_iqr(self, site_id: str) -> bool:
        return self.q1 <= self.site_means[site_id] <= self.q3


def _check_grids(profiles: Sequence[WpeProfile]):
    reference = profiles[0]
    for profile in profiles[1:]:
        if not profile.same_grid(reference):
            raise ContractViolation(
                f"profile of site {profile.site_id} does not share the window grid of {reference.site_id}"
            )


def mean_profile(profiles: Sequence[WpeProfile], site_id: str = "mean") -> WpeProfile:
    """Pointwise mean over sites, skipping undefined values"""
    if len(profiles) < 2:
        raise ContractViolation("a mean profile needs at least 2 profiles")
    _check_grids(profiles)

    stacked = np.vstack([p.values for p in profiles])
    defined = ~np.isnan(stacked)
    counts = defined.sum(axis=0)
    sums = np.where(defined, stacked, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return WpeProfile(site_id, profiles[0].starts, values)


def regional_spread(profiles: Sequence[WpeProfile]) -> np.ndarray:
    """Per-point population standard deviation across sites, skipping undefined values"""
    _check_grids(profiles)
    stacked = np.vstack([p.values for p in profiles])
    defined = ~np.isnan(stacked)
    counts = defined.sum(axis=0)
    safe = np.maximum(counts, 1)
    means = np.where(defined, stacked, 0.0).sum(axis=0) / safe
    squares = np.where(defined, (stacked - means) ** 2, 0.0).sum(axis=0)
    return np.where(counts > 0, np.sqrt(squares / safe), np.nan)


def correlate(profile: WpeProfile, mean: WpeProfile,
              method: CorrelationMethod = CorrelationMethod.PEARSON) -> Optional[float]:
    """Correlation over jointly defined points; None when it cannot be estimated"""
    if not profile.same_grid(mean):
        raise ContractViolation(f"profile of site {profile.site_id} does not share the mean's window grid")

    joint = ~np.isnan(profile.values) & ~np.isnan(mean.values)
    if joint.sum() < MIN_JOINT_POINTS:
        return None
    x, y = profile.values[joint], mean.values[joint]
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        return None

    if method is CorrelationMethod.SPEARMAN:
        value = stats.spearmanr(x, y).statistic
    else:
        value = np.corrcoef(x, y)[0, 1]
    if not np.isfinite(value):
        return None
    return float(np.clip(value, -1.0, 1.0))


def flag_outliers(correlations: Dict[str, Optional[float]],
                  rule: DetectionRule = DetectionRule()) -> Dict[str, Verdict]:
    """Verdict per site; a None correlation yields INSUFFICIENT"""
    defined = {site: c for site, c in correlations.items() if c is not None}

    if rule.kind is RuleKind.FIXED_THRESHOLD:
        if len(correlations) < MIN_SITES_FIXED:
            raise ContractViolation(
                f"fixed-threshold rule needs at least {MIN_SITES_FIXED} sites, got {len(correlations)}"
            )
        cutoff = rule.threshold
    else:
        if len(defined) < MIN_SITES_IQR:
            raise ContractViolation(
                f"IQR rule needs at least {MIN_SITES_IQR} sites with a correlation, got {len(defined)}; "
                f"use the fixed-threshold rule for small regions"
            )
        q1, q3 = np.percentile(np.fromiter(defined.values(), dtype=float), [25, 75], method="linear")
        cutoff = q1 - (q3 - q1)

    verdicts = {}
    for site, value in correlations.items():
        if value is None:
            verdicts[site] = Verdict.INSUFFICIENT
        elif value < cutoff:
            verdicts[site] = Verdict.ANOMALOUS
        else:
            verdicts[site] = Verdict.NORMAL
    return verdicts


def localize(profile: WpeProfile, mean: WpeProfile, spread: np.ndarray,
             band: float = DEFAULT_BAND) -> AnomalyLocalization:
    """Windows where |profile - mean| exceeds band times the regional spread"""
    if band <= 0:
        raise ContractViolation(f"localisation band must be > 0, got {band}")
    if not profile.same_grid(mean):
        raise ContractViolation(f"profile of site {profile.site_id} does not share the mean's window grid")
    spread = np.asarray(spread, dtype=float)
    if spread.size != len(mean):
        raise ContractViolation("spread must hold one value per window position")

    deviation = profile.values - mean.values
    with np.errstate(invalid="ignore"):
        divergent = np.abs(deviation) > band * spread
    divergent &= ~np.isnan(deviation) & ~np.isnan(spread)

    positions = np.flatnonzero(divergent)
    windows = [(profile.starts[i].isoformat(), float(deviation[i])) for i in positions]
    signs = {bool(deviation[i] > 0) for i in positions}
    if not signs:
        direction = Direction.NONE
    elif signs == {True}:
        direction = Direction.ABOVE_MEAN
    elif signs == {False}:
        direction = Direction.BELOW_MEAN
    else:
        direction = Direction.MIXED
    return AnomalyLocalization(profile.site_id, windows, direction)


@track_performance("detector", "analyze_region")
def analyze_region(region_id: str,
                   profiles: Sequence[WpeProfile],
                   rule: DetectionRule = DetectionRule(),
                   method: CorrelationMethod = CorrelationMethod.PEARSON,
                   leave_one_out: bool = False,
                   max_undefined_fraction: float = MAX_UNDEFINED_FRACTION) -> RegionAnalysis:
    """Mean profile, correlations and verdicts for one region"""
    profiles = [p for p in profiles if len(p)]
    if len(profiles) < 2:
        raise ContractViolation(f"region {region_id} needs at least 2 non-empty profiles")
    regional_mean = mean_profile(profiles, site_id=f"mean:{region_id}")

    correlations: Dict[str, Optional[float]] = {}
    for index, profile in enumerate(profiles):
        if profile.undefined_fraction > max_undefined_fraction:
            logger.warning(f"⚠️ {profile.site_id}: {profile.undefined_fraction:.0%} undefined windows")
            correlations[profile.site_id] = None
            continue
        reference = regional_mean
        if leave_one_out:
            others = profiles[:index] + profiles[index + 1:]
            reference = mean_profile(others) if len(others) >= 2 else others[0]
        correlations[profile.site_id] = correlate(profile, reference, method)

    verdicts = flag_outliers(correlations, rule)
    flagged = sum(1 for v in verdicts.values() if v.flagged)
    logger.info(f"🔎 Region {region_id}: {len(profiles)} sites, {flagged} flagged ({rule.describe()})")
    return RegionAnalysis(region_id, regional_mean, correlations, verdicts, rule, method)


def localize_anomalies(analysis: RegionAnalysis, profiles: Sequence[WpeProfile],
                       band: float = DEFAULT_BAND, all_sites: bool = False) -> Dict[str, AnomalyLocalization]:
    """Localisations for flagged sites (or every site)"""
    profiles = [p for p in profiles if len(p)]
    spread = regional_spread(profiles)
    return {
        p.site_id: localize(p, analysis.mean_profile, spread, band)
        for p in profiles
        if all_sites or analysis.verdicts.get(p.site_id, Verdict.NORMAL).flagged
    }


def summarize_generation(series_list: Sequence[GenerationSeries]) -> GenerationSummary:
    """Span-mean per-unit generation per site and regional quartiles"""
    if not series_list:
        nan = float("nan")
        return GenerationSummary({}, nan, nan, nan, nan)
    means = {s.site_id: float(np.nanmean(s.values)) for s in series_list}
    values = np.fromiter(means.values(), dtype=float)
    q1, median, q3 = (float(q) for q in np.percentile(values, [25, 50, 75], method="linear"))
    return GenerationSummary(means, float(values.mean()), median, q1, q3)
