"""
Detection Evaluation Engine
Scores a detection run against injected-fault ground truth: site-level
precision / recall / F1, localisation overlap and fault direction.
"""

import json
import logging
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Union

import numpy as np
import pandas as pd

from analysis.detector import AnomalyLocalization, Direction, RegionAnalysis
from analysis.profiler import WpeProfile
from utils.synth import FaultKind, FaultSpec

logger = logging.getLogger(__name__)

EXPECTED_DIRECTION = {
    FaultKind.PARTIAL_SHADING: Direction.BELOW_MEAN,
    FaultKind.CURTAILMENT_CLIPPING: Direction.ABOVE_MEAN,
    FaultKind.RAPID_FLUCTUATION: Direction.ABOVE_MEAN,
    FaultKind.DEAD_OUTPUT: None,
}


@dataclass
class FaultEvaluation:
    """Outcome for a single injected fault"""
    site_id: str
    kind: str
    status: str  # "flagged", "missed", "excluded", "not_analyzed"
    jaccard: Optional[float] = None
    fault_windows: int = 0
    flagged_windows: int = 0
    mean_deviation: Optional[float] = None
    expected_direction: Optional[str] = None
    direction_correct: Optional[bool] = None

    @property
    def detected(self) -> bool:
        return self.status in ("flagged", "excluded")


@dataclass
class DetectionMetrics:
    total_faults: int
    precision: float
    recall: float
    f1: float
    mean_jaccard: Optional[float]
    direction_accuracy: Optional[float]
    false_positives: List[str] = field(default_factory=list)
    recall_by_kind: Dict[str, float] = field(default_factory=dict)
    faults: List[FaultEvaluation] = field(default_factory=list)

    def to_dict(self) -> Dict:
        payload = asdict(self)
        payload["faults"] = [asdict(f) for f in self.faults]
        return payload


def jaccard_index(a: Iterable, b: Iterable) -> float:
    """|a ∩ b| / |a ∪ b|; two empty sets agree perfectly"""
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


def overlapping_windows(starts: pd.DatetimeIndex, window_span: pd.Timedelta,
                        fault: FaultSpec, min_share: float = 0.5) -> Set[str]:
    """Window starts dominated by the fault.

    A window [start, start + window_span) counts when its overlap with the
    fault covers at least min_share of the shorter of the two intervals.
    min_share=0 accepts any overlap.
    """
    ends = starts + window_span
    overlap = (ends.where(ends < fault.end, fault.end)
               - starts.where(starts > fault.start, fault.start))
    needed = min_share * min(window_span, fault.end - fault.start)
    hit = (overlap > pd.Timedelta(0)) & (overlap >= needed)
    return {ts.isoformat() for ts in starts[np.asarray(hit)]}


class DetectionEvaluator:
    """Compares verdicts and localisations with the faults that were injected"""

    def __init__(self, faults: Sequence[FaultSpec], window_span: pd.Timedelta):
        self.faults = list(faults)
        self.window_span = pd.Timedelta(window_span)

    def evaluate(self,
                 analyses: Sequence[RegionAnalysis],
                 profiles: Sequence[WpeProfile],
                 localizations: Mapping[str, AnomalyLocalization],
                 excluded: Iterable[str] = ()) -> DetectionMetrics:
        excluded = set(excluded)
        by_site = {p.site_id: p for p in profiles}
        region_of = {site: a for a in analyses for site in a.verdicts}
        flagged = {site for a in analyses for site in a.flagged_sites}
        faulted = {f.site_id for f in self.faults}

        results = [self._evaluate_fault(f, region_of, by_site, localizations, flagged, excluded)
                   for f in self.faults]

        true_positives = len({r.site_id for r in results if r.detected})
        false_positives = sorted(flagged - faulted)
        false_negatives = len(faulted) - true_positives
        precision = (true_positives / (true_positives + len(false_positives))
                     if (true_positives + len(false_positives)) > 0 else 0.0)
        recall = true_positives / (true_positives + false_negatives) if faulted else 0.0
        f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0

        overlaps = [r.jaccard for r in results if r.jaccard is not None]
        directions = [r.direction_correct for r in results if r.direction_correct is not None]
        recall_by_kind = {}
        for kind in sorted({r.kind for r in results}):
            of_kind = [r for r in results if r.kind == kind]
            recall_by_kind[kind] = sum(1 for r in of_kind if r.detected) / len(of_kind)

        metrics = DetectionMetrics(
            total_faults=len(results),
            precision=precision,
            recall=recall,
            f1=f1,
            mean_jaccard=statistics.mean(overlaps) if overlaps else None,
            direction_accuracy=sum(directions) / len(directions) if directions else None,
            false_positives=false_positives,
            recall_by_kind=recall_by_kind,
            faults=results,
        )
        logger.info(f"🎯 Evaluation: precision={precision:.3f} recall={recall:.3f} F1={f1:.3f}")
        return metrics

    def _evaluate_fault(self, fault: FaultSpec, region_of: Mapping[str, RegionAnalysis],
                        by_site: Mapping[str, WpeProfile],
                        localizations: Mapping[str, AnomalyLocalization],
                        flagged: Set[str], excluded: Set[str]) -> FaultEvaluation:
        expected = EXPECTED_DIRECTION[fault.kind]
        result = FaultEvaluation(
            site_id=fault.site_id,
            kind=fault.kind.value,
            status="not_analyzed",
            expected_direction=expected.value if expected else None,
        )
        if fault.site_id in excluded:
            result.status = "excluded"
            return result
        if fault.site_id not in region_of or fault.site_id not in by_site:
            return result

        result.status = "flagged" if fault.site_id in flagged else "missed"
        profile = by_site[fault.site_id]
        mean = region_of[fault.site_id].mean_profile
        truth = overlapping_windows(profile.starts, self.window_span, fault)
        localization = localizations.get(fault.site_id)
        marked = set(localization.window_starts) if localization else set()

        result.fault_windows = len(truth)
        result.flagged_windows = len(marked)
        result.jaccard = jaccard_index(marked, truth)

        in_fault = np.array([ts.isoformat() in truth for ts in profile.starts], dtype=bool)
        deviation = (profile.values - mean.values)[in_fault]
        deviation = deviation[~np.isnan(deviation)]
        if deviation.size:
            result.mean_deviation = float(deviation.mean())
            if expected is not None:
                observed = Direction.ABOVE_MEAN if result.mean_deviation > 0 else Direction.BELOW_MEAN
                result.direction_correct = observed is expected
        return result

    @staticmethod
    def generate_report(metrics: DetectionMetrics) -> str:
        """Markdown summary of an evaluation"""
        lines = [
            "# Detection Evaluation",
            "",
            f"- **Faults**: {metrics.total_faults}",
            f"- **Precision**: {metrics.precision:.3f}",
            f"- **Recall**: {metrics.recall:.3f}",
            f"- **F1 Score**: {metrics.f1:.3f}",
        ]
        if metrics.mean_jaccard is not None:
            lines.append(f"- **Mean localisation Jaccard**: {metrics.mean_jaccard:.3f}")
        if metrics.false_positives:
            lines.append(f"- **False positives**: {', '.join(metrics.false_positives)}")
        lines += ["", "| site | kind | status | jaccard | direction ok |", "|---|---|---|---|---|"]
        for f in metrics.faults:
            jaccard = "" if f.jaccard is None else f"{f.jaccard:.2f}"
            direction = "" if f.direction_correct is None else ("yes" if f.direction_correct else "no")
            lines.append(f"| {f.site_id} | {f.kind} | {f.status} | {jaccard} | {direction} |")
        return "\n".join(lines) + "\n"

    @staticmethod
    def save_results(metrics: DetectionMetrics, filepath: Union[str, Path]) -> Path:
        path = Path(filepath)
        path.write_text(json.dumps(metrics.to_dict(), indent=2, allow_nan=False) + "\n")
        return path
