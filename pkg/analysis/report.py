"""
Region Report
Assembles a region's analysis into the machine-readable report: per-site
records, correlation histogram and generation-mean context.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from analysis.detector import AnomalyLocalization, Direction, GenerationSummary, RegionAnalysis
from analysis.errors import ContractViolation

logger = logging.getLogger(__name__)

HISTOGRAM_BIN_WIDTH = 0.05
HISTOGRAM_EDGES = np.linspace(-1.0, 1.0, int(round(2.0 / HISTOGRAM_BIN_WIDTH)) + 1)
HISTOGRAM_COLUMNS = ["region_id", "bin_low", "bin_high", "count"]


def _optional(value: Optional[float]) -> Optional[float]:
    if value is None or np.isnan(value):
        return None
    return float(value)


@dataclass
class SiteRecord:
    site_id: str
    correlation: Optional[float]
    verdict: str
    mean_generation: Optional[float] = None
    direction: str = Direction.NONE.value
    divergent_windows: List[Tuple[str, float]] = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return self.verdict != "normal"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "site_id": self.site_id,
            "correlation": self.correlation,
            "verdict": self.verdict,
            "mean_generation": self.mean_generation,
            "localization": {
                "direction": self.direction,
                "n_divergent": len(self.divergent_windows),
                "divergent_windows": [
                    {"window_start": start, "deviation": deviation}
                    for start, deviation in self.divergent_windows
                ],
            },
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "SiteRecord":
        localization = payload.get("localization", {})
        return cls(
            site_id=payload["site_id"],
            correlation=payload["correlation"],
            verdict=payload["verdict"],
            mean_generation=payload.get("mean_generation"),
            direction=localization.get("direction", Direction.NONE.value),
            divergent_windows=[
                (w["window_start"], w["deviation"]) for w in localization.get("divergent_windows", [])
            ],
        )


@dataclass
class RegionReport:
    region_id: str
    n_sites: int
    rule: str
    method: str
    sites: List[SiteRecord]
    bin_edges: List[float]
    counts: List[int]
    generation_context: Dict[str, Optional[float]] = field(default_factory=dict)

    @property
    def anomalous_sites(self) -> List[str]:
        return [s.site_id for s in self.sites if s.flagged]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "region_id": self.region_id,
            "n_sites": self.n_sites,
            "rule": self.rule,
            "method": self.method,
            "generation_context": dict(self.generation_context),
            "histogram": {"bin_edges": list(self.bin_edges), "counts": list(self.counts)},
            "sites": [s.to_dict() for s in self.sites],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "RegionReport":
        histogram = payload["histogram"]
        return cls(
            region_id=payload["region_id"],
            n_sites=payload["n_sites"],
            rule=payload["rule"],
            method=payload["method"],
            sites=[SiteRecord.from_dict(s) for s in payload["sites"]],
            bin_edges=[float(e) for e in histogram["bin_edges"]],
            counts=[int(c) for c in histogram["counts"]],
            generation_context=dict(payload.get("generation_context", {})),
        )

    @classmethod
    def from_json(cls, text: str) -> "RegionReport":
        return cls.from_dict(json.loads(text))


def correlation_histogram(correlations: Mapping[str, Optional[float]]) -> Tuple[List[float], List[int]]:
    """Counts of defined correlations in fixed 0.05-wide bins over [-1, 1]"""
    values = np.array([c for c in correlations.values() if c is not None], dtype=float)
    counts, edges = np.histogram(values, bins=HISTOGRAM_EDGES)
    return [float(e) for e in edges], [int(c) for c in counts]


def _sort_key(record: SiteRecord):
    # undefined correlations sort last
    if record.correlation is None:
        return (1, 0.0, record.site_id)
    return (0, record.correlation, record.site_id)


def build_report(analysis: RegionAnalysis,
                 localizations: Optional[Mapping[str, AnomalyLocalization]] = None,
                 generation: Optional[GenerationSummary] = None) -> RegionReport:
    """Deterministic report of one region's analysis"""
    localizations = localizations or {}
    sites = set(analysis.verdicts)

    stray = sorted(set(localizations) - sites)
    if stray:
        raise ContractViolation(f"localizations for sites outside region {analysis.region_id}: {stray}")
    if generation is not None and set(generation.site_means) != sites:
        missing = sorted(sites - set(generation.site_means))
        extra = sorted(set(generation.site_means) - sites)
        raise ContractViolation(
            f"generation summary does not match region {analysis.region_id} (missing {missing}, extra {extra})"
        )

    records = []
    for site_id, verdict in analysis.verdicts.items():
        localization = localizations.get(site_id)
        records.append(SiteRecord(
            site_id=site_id,
            correlation=analysis.correlations.get(site_id),
            verdict=verdict.value,
            mean_generation=_optional(generation.site_means[site_id]) if generation else None,
            direction=localization.direction.value if localization else Direction.NONE.value,
            divergent_windows=list(localization.divergent_windows) if localization else [],
        ))
    records.sort(key=_sort_key)

    edges, counts = correlation_histogram(analysis.correlations)
    context = {}
    if generation is not None:
        context = {
            "mean": _optional(generation.mean),
            "median": _optional(generation.median),
            "q1": _optional(generation.q1),
            "q3": _optional(generation.q3),
        }

    return RegionReport(
        region_id=analysis.region_id,
        n_sites=len(records),
        rule=analysis.rule.describe(),
        method=analysis.method.value,
        sites=records,
        bin_edges=edges,
        counts=counts,
        generation_context=context,
    )


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------

def region_filename(region_id: str) -> str:
    return f"region_{region_id}.json"


def write_region_json(report: RegionReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(report.to_json())
    return path


def read_region_json(path: Union[str, Path]) -> RegionReport:
    return RegionReport.from_json(Path(path).read_text())


def write_correlation_hist_csv(reports: Sequence[RegionReport], path: Union[str, Path]) -> Path:
    rows = []
    for report in reports:
        for low, high, count in zip(report.bin_edges[:-1], report.bin_edges[1:], report.counts):
            rows.append({"region_id": report.region_id, "bin_low": low, "bin_high": high, "count": count})
    path = Path(path)
    pd.DataFrame(rows, columns=HISTOGRAM_COLUMNS).to_csv(path, index=False, lineterminator="\n")
    return path


def read_correlation_hist_csv(path: Union[str, Path]) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"region_id": str}, float_precision="round_trip")
    if list(frame.columns) != HISTOGRAM_COLUMNS:
        raise ContractViolation(f"histogram CSV header must be {','.join(HISTOGRAM_COLUMNS)}")
    return frame


def anomaly_listing(reports: Sequence[RegionReport]) -> List[Dict[str, Any]]:
    """Flagged sites across regions, ordered by region then site"""
    listing = []
    for report in sorted(reports, key=lambda r: r.region_id):
        for record in sorted(report.sites, key=lambda s: s.site_id):
            if record.flagged:
                listing.append({
                    "region_id": report.region_id,
                    "site_id": record.site_id,
                    "verdict": record.verdict,
                    "correlation": record.correlation,
                    "direction": record.direction,
                })
    return listing


def write_json(payload: Any, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, allow_nan=False) + "\n")
    return path
