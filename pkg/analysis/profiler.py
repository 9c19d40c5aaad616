"""
WPE Profiler
Rolling-window WPE profiles per site and the (d, tau) sensitivity sweep.

Each series is embedded once; every window then reduces to a weighted
bincount over its slice of pattern codes, so overlapping windows share work.
"""

import json
import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from analysis.errors import ContractViolation, ShortWindowWarning
from analysis.wpe_core import (
    EmbeddingConfig,
    check_window_length,
    pattern_codes_and_weights,
    pattern_histogram,
    wpe,
    wpe_from_histogram,
)
from utils.ingest import GenerationSeries
from utils.performance_tracker import get_performance_tracker, track_performance

logger = logging.getLogger(__name__)

SAMPLES_PER_DAY_5MIN = 288
PROFILE_COLUMNS = ["site_id", "window_start", "wpe"]
SWEEP_COLUMNS = ["d", "tau", "median", "q1", "q3", "whisker_low", "whisker_high", "n_outliers"]


@dataclass(frozen=True)
class WindowSpec:
    """Rolling window width and stride, both in samples"""
    width: int = 90 * SAMPLES_PER_DAY_5MIN
    stride: int = SAMPLES_PER_DAY_5MIN

    def __post_init__(self):
        if self.stride < 1:
            raise ContractViolation(f"window stride {self.stride} must be >= 1")
        if self.width < 1:
            raise ContractViolation(f"window width {self.width} must be >= 1")

    def validate_for(self, cfg: EmbeddingConfig):
        if self.width < cfg.min_window:
            raise ContractViolation(
                f"window width {self.width} is shorter than one embedding vector "
                f"for {cfg.label()} ({cfg.min_window} samples)"
            )

    def n_windows(self, n_samples: int) -> int:
        if n_samples < self.width:
            return 0
        return (n_samples - self.width) // self.stride + 1


@dataclass(eq=False)
class WpeProfile:
    """WPE per window position; NaN marks an undefined (zero-weight) window"""
    site_id: str
    starts: pd.DatetimeIndex
    values: np.ndarray
    diagnostics: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if len(self.starts) != self.values.size:
            raise ContractViolation(
                f"profile {self.site_id} has {len(self.starts)} window starts but {self.values.size} values"
            )

    def __len__(self) -> int:
        return self.values.size

    @property
    def undefined_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def undefined_fraction(self) -> float:
        return float(self.undefined_mask.mean()) if len(self) else 1.0

    def same_grid(self, other: "WpeProfile") -> bool:
        return len(self) == len(other) and bool(np.all(self.starts == other.starts))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "site_id": self.site_id,
            "window_start": [ts.isoformat() for ts in self.starts],
            "wpe": self.values,
        }, columns=PROFILE_COLUMNS)

    def to_dict(self) -> Dict:
        return {
            "site_id": self.site_id,
            "points": [
                {"window_start": ts.isoformat(), "wpe": None if np.isnan(v) else float(v)}
                for ts, v in zip(self.starts, self.values)
            ],
        }

    @classmethod
    def from_dict(cls, payload: Dict) -> "WpeProfile":
        points = payload.get("points", [])
        return cls(
            site_id=payload["site_id"],
            starts=pd.DatetimeIndex([pd.Timestamp(p["window_start"]) for p in points]),
            values=np.array([np.nan if p["wpe"] is None else p["wpe"] for p in points], dtype=float),
        )


@dataclass
class BoxStats:
    """Tukey box-plot summary of one (d, tau) cell"""
    d: int
    tau: int
    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    outlier_values: Tuple[float, ...] = ()
    n_values: int = 0
    seconds: float = 0.0

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1

    def to_row(self) -> Dict:
        return {
            "d": self.d,
            "tau": self.tau,
            "median": self.median,
            "q1": self.q1,
            "q3": self.q3,
            "whisker_low": self.whisker_low,
            "whisker_high": self.whisker_high,
            "n_outliers": len(self.outlier_values),
        }


@dataclass
class SweepResult:
    cells: List[BoxStats]

    def cell(self, d: int, tau: int) -> BoxStats:
        for stats in self.cells:
            if stats.d == d and stats.tau == tau:
                return stats
        raise KeyError(f"no sweep cell for d={d}, tau={tau}")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([c.to_row() for c in self.cells], columns=SWEEP_COLUMNS)


def default_grid() -> List[EmbeddingConfig]:
    return [EmbeddingConfig(d, tau) for d in range(3, 8) for tau in (1, 2, 3)]


def _window_starts(series: GenerationSeries, win: WindowSpec, count: int) -> pd.DatetimeIndex:
    return pd.date_range(series.start, periods=count, freq=series.interval * win.stride)


def rolling_wpe_profile(series: GenerationSeries, cfg: EmbeddingConfig, win: WindowSpec) -> WpeProfile:
    """WPE of every window position, from sample 0 forward by the stride"""
    win.validate_for(cfg)
    count = win.n_windows(len(series))
    if count == 0:
        message = f"series of {len(series)} samples is shorter than one window of {win.width}"
        logger.warning(f"⚠️ {series.site_id}: {message}; empty profile")
        return WpeProfile(series.site_id, pd.DatetimeIndex([], tz="UTC"), np.empty(0), [message])

    diagnostics = []
    if win.width <= cfg.recommended_window:
        diagnostics.append(f"window width {win.width} is not above 5·d! = {cfg.recommended_window}")

    codes, weights = pattern_codes_and_weights(series.values, cfg)
    per_window = win.width - cfg.span
    values = np.empty(count)
    for k in range(count):
        first = k * win.stride
        histogram = pattern_histogram(codes[first:first + per_window], weights[first:first + per_window], cfg)
        values[k] = wpe_from_histogram(histogram, cfg).as_float()

    undefined = int(np.isnan(values).sum())
    if undefined:
        diagnostics.append(f"{undefined} of {count} windows carry no weight (flat output)")
        logger.debug(f"{series.site_id}: {undefined} undefined windows")
    return WpeProfile(series.site_id, _window_starts(series, win, count), values, diagnostics)


@track_performance("profiler", "profile_fleet")
def profile_fleet(series_list: Sequence[GenerationSeries], cfg: EmbeddingConfig, win: WindowSpec,
                  workers: int = 1) -> List[WpeProfile]:
    """Profiles for many sites; output order follows the input, whatever the worker count"""
    win.validate_for(cfg)
    if win.width <= cfg.recommended_window:
        logger.warning(
            f"⚠️ Window width {win.width} is not above 5·d! = {cfg.recommended_window} for {cfg.label()}"
        )

    logger.info(f"📈 Profiling {len(series_list)} sites ({cfg.label()}, width={win.width}, "
                f"stride={win.stride}, workers={workers})")
    if workers <= 1:
        return [rolling_wpe_profile(s, cfg, win) for s in series_list]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: rolling_wpe_profile(s, cfg, win), series_list))


def box_stats(values: Sequence[float], d: int, tau: int) -> BoxStats:
    """Tukey box statistics with linearly interpolated quartiles"""
    data = np.asarray([v for v in values if not np.isnan(v)], dtype=float)
    if data.size == 0:
        nan = float("nan")
        return BoxStats(d, tau, nan, nan, nan, nan, nan, (), 0)

    q1, median, q3 = (float(q) for q in np.percentile(data, [25, 50, 75], method="linear"))
    iqr = q3 - q1
    low_fence, high_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = data[(data >= low_fence) & (data <= high_fence)]
    outliers = tuple(sorted(float(v) for v in data[(data < low_fence) | (data > high_fence)]))
    return BoxStats(
        d=d, tau=tau, median=median, q1=q1, q3=q3,
        whisker_low=float(inside.min()), whisker_high=float(inside.max()),
        outlier_values=outliers, n_values=int(data.size),
    )


@track_performance("profiler", "hyperparameter_sweep")
def hyperparameter_sweep(series_list: Sequence[GenerationSeries],
                         grid: Iterable[EmbeddingConfig]) -> SweepResult:
    """Whole-series WPE per site for each (d, tau), summarised across sites"""
    grid = list(grid)
    if not grid:
        raise ContractViolation("hyperparameter sweep needs a non-empty grid")
    if not series_list:
        raise ContractViolation("hyperparameter sweep needs at least one series")

    largest = max(grid, key=lambda c: c.d)
    short = [s.site_id for s in series_list if len(s) <= largest.recommended_window]
    if short:
        logger.warning(f"⚠️ {len(short)} series are not above 5·d! = {largest.recommended_window} samples")

    tracker = get_performance_tracker()
    cells = []
    for cfg in grid:
        started = time.perf_counter()
        with warnings.catch_warnings():
            # already reported once above
            warnings.simplefilter("ignore", ShortWindowWarning)
            values = [wpe(s.values, cfg).as_float() for s in series_list]
        elapsed = time.perf_counter() - started
        tracker.track_metric("profiler", f"sweep_cell_d{cfg.d}_tau{cfg.tau}", elapsed)

        stats = box_stats(values, cfg.d, cfg.tau)
        stats.seconds = elapsed
        cells.append(stats)
        logger.info(f"🔬 Sweep {cfg.label()}: median={stats.median:.4f} IQR={stats.iqr:.4f} "
                    f"({elapsed:.2f}s)")
    return SweepResult(cells)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def write_profiles_csv(profiles: Sequence[WpeProfile], path: Union[str, Path]) -> Path:
    path = Path(path)
    frames = [p.to_frame() for p in profiles]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=PROFILE_COLUMNS)
    frame.to_csv(path, index=False, na_rep="NaN", lineterminator="\n")
    return path


def read_profiles_csv(path: Union[str, Path]) -> List[WpeProfile]:
    frame = pd.read_csv(path, dtype={"site_id": str, "window_start": str},
                        keep_default_na=False, na_values=["NaN"], float_precision="round_trip")
    if list(frame.columns) != PROFILE_COLUMNS:
        raise ContractViolation(f"profile CSV header must be {','.join(PROFILE_COLUMNS)}")

    profiles = []
    for site_id, rows in frame.groupby("site_id", sort=False):
        profiles.append(WpeProfile(
            site_id=str(site_id),
            starts=pd.DatetimeIndex(pd.to_datetime(rows["window_start"], format="ISO8601")),
            values=rows["wpe"].to_numpy(dtype=float),
        ))
    return profiles


def write_profiles_json(profiles: Sequence[WpeProfile], cfg: EmbeddingConfig, win: WindowSpec,
                        path: Union[str, Path]) -> Path:
    path = Path(path)
    payload = {
        "d": cfg.d,
        "tau": cfg.tau,
        "width": win.width,
        "stride": win.stride,
        "profiles": [p.to_dict() for p in profiles],
    }
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path


def write_sweep_csv(result: SweepResult, path: Union[str, Path]) -> Path:
    path = Path(path)
    result.to_frame().to_csv(path, index=False, lineterminator="\n")
    return path


def read_profiles_json(path: Union[str, Path]) -> Tuple[List[WpeProfile], EmbeddingConfig, WindowSpec]:
    payload = json.loads(Path(path).read_text())
    try:
        cfg = EmbeddingConfig(int(payload["d"]), int(payload["tau"]))
        win = WindowSpec(int(payload["width"]), int(payload["stride"]))
        profiles = [WpeProfile.from_dict(p) for p in payload["profiles"]]
    except KeyError as e:
        raise ContractViolation(f"profile JSON missing field {e}")
    return profiles, cfg, win
