"""
Generation Data Ingestion
Loads per-site PV generation CSVs, applies the cleaning rules (missing-point
cutoff, last-observation-carried-forward fill, per-unit normalisation,
curtailment screen) and groups sites into regions by postcode.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from analysis.errors import ContractViolation, IngestError
from utils.performance_tracker import track_performance

logger = logging.getLogger(__name__)

DEFAULT_INTERVAL = pd.Timedelta(minutes=5)
LONG_COLUMNS = ["site_id", "postcode", "timestamp", "power"]
ISO_FORMAT = "%Y-%m-%dT%H:%M:%SZ"


@dataclass(eq=False)
class GenerationSeries:
    """One site's generation on a regular grid; NaN marks a raw gap"""
    site_id: str
    postcode: str
    start: pd.Timestamp
    values: np.ndarray
    interval: pd.Timedelta = DEFAULT_INTERVAL
    missing_count: int = 0
    filled_mask: Optional[np.ndarray] = None
    leading_filled: int = 0
    per_unit: bool = False
    timezone: Optional[str] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size == 0:
            raise ContractViolation(f"series {self.site_id} must hold at least one sample")
        if self.filled_mask is None:
            self.filled_mask = np.zeros(self.values.size, dtype=bool)
        self.start = pd.Timestamp(self.start)
        if self.start.tzinfo is None:
            self.start = self.start.tz_localize("UTC")

    def __len__(self) -> int:
        return self.values.size

    @property
    def timestamps(self) -> pd.DatetimeIndex:
        return pd.date_range(self.start, periods=len(self), freq=self.interval)

    @property
    def local_timestamps(self) -> pd.DatetimeIndex:
        """Sample times in the site's own zone; UTC when none is known"""
        stamps = self.timestamps
        return stamps.tz_convert(self.timezone) if self.timezone else stamps

    @property
    def gap_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def samples_per_day(self) -> int:
        return int(pd.Timedelta(days=1) / self.interval)

    def with_values(self, values: np.ndarray, **changes) -> "GenerationSeries":
        return replace(self, values=np.asarray(values, dtype=float), **changes)


@dataclass
class CsvSchema:
    """How an input file is laid out"""
    layout: str = "long"
    interval: pd.Timedelta = DEFAULT_INTERVAL
    metadata_path: Optional[str] = None
    timezone: Optional[str] = None

    def __post_init__(self):
        if self.layout not in ("long", "wide"):
            raise ContractViolation(f"unknown CSV layout '{self.layout}' (expected long or wide)")
        self.interval = pd.Timedelta(self.interval)


@dataclass
class CleaningPolicy:
    max_missing: int = 200
    leading_fill: float = 0.0


@dataclass
class CurtailmentPolicy:
    """Heuristic thresholds for the negative-generation / clipping screen"""
    negative_epsilon: float = 0.01
    max_months: int = 7
    plateau_samples: int = 12
    plateau_tolerance: float = 0.005
    midday_start_hour: float = 10.0
    midday_end_hour: float = 14.0
    plateau_min_level: float = 0.2
    min_days_per_month: int = 5


@dataclass
class Exclusion:
    site_id: str
    reason: str
    detail: str = ""

    def to_dict(self) -> Dict[str, str]:
        return {"site_id": self.site_id, "reason": self.reason, "detail": self.detail}


class ScreenVerdict(Enum):
    KEEP = "keep"
    EXCLUDED = "excluded"


@dataclass
class ScreenResult:
    verdict: ScreenVerdict
    negative_months: int = 0
    clipping_months: int = 0


@dataclass
class PostcodeRange:
    low: int
    high: int

    @property
    def label(self) -> str:
        return str(self.low) if self.low == self.high else f"{self.low}-{self.high}"

    def contains(self, postcode: str) -> bool:
        try:
            value = int(str(postcode).strip())
        except ValueError:
            return False
        return self.low <= value <= self.high


@dataclass
class RegionGroup:
    region_id: str
    site_ids: Tuple[str, ...] = field(default_factory=tuple)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _line_of(row_index: int) -> int:
    # header is line 1
    return int(row_index) + 2


def _parse_timestamps(raw: pd.Series, schema: CsvSchema) -> pd.Series:
    blank = raw.str.strip() == ""
    if schema.timezone:
        parsed = pd.to_datetime(raw.where(~blank), format="ISO8601", errors="coerce")
        if getattr(parsed.dt, "tz", None) is None:
            parsed = parsed.dt.tz_localize(schema.timezone, ambiguous="NaT", nonexistent="NaT")
        parsed = parsed.dt.tz_convert("UTC")
    else:
        parsed = pd.to_datetime(raw.where(~blank), format="ISO8601", errors="coerce", utc=True)

    bad = parsed.isna()
    if bad.any():
        first = bad.idxmax()
        raise IngestError(f"unparseable timestamp '{raw.loc[first]}'", line=_line_of(first))
    return parsed


def _parse_power(raw: pd.Series, column: str) -> np.ndarray:
    text = raw.str.strip()
    blank = text == ""
    try:
        # exported values must reload bit-identical
        values = text.where(~blank, "nan").astype(float).to_numpy()
    except ValueError:
        coerced = pd.to_numeric(text.where(~blank), errors="coerce")
        bad = coerced.isna() & ~blank
        first = bad.idxmax()
        raise IngestError(f"unparseable {column} value '{raw.loc[first]}'", line=_line_of(first))
    return values


def _grid_positions(timestamps: pd.Series, interval: pd.Timedelta, site_id: str) -> np.ndarray:
    """Sample index of every row; rows must sit on the interval grid"""
    order = np.argsort(timestamps.values, kind="stable")
    ordered = timestamps.iloc[order]
    duplicated = ordered.duplicated(keep=False)
    if duplicated.any():
        lines = sorted(_line_of(i) for i in ordered.index[duplicated.to_numpy()])
        raise IngestError(
            f"duplicated timestamp {ordered[duplicated].iloc[0].isoformat()} on lines {lines[:4]}",
            line=lines[0], site_id=site_id,
        )

    offsets = (timestamps - ordered.iloc[0]).to_numpy()
    step = interval.to_timedelta64()
    off_grid = offsets % step != np.timedelta64(0, "ns")
    if off_grid.any():
        first = int(np.argmax(off_grid))
        raise IngestError(
            f"non-uniform sampling: timestamp {timestamps.iloc[first].isoformat()} is off the "
            f"{interval} grid", line=_line_of(timestamps.index[first]), site_id=site_id,
        )
    return (offsets // step).astype(np.int64)


def _assemble(site_id: str, postcode: str, timestamps: pd.Series,
              power: np.ndarray, schema: CsvSchema) -> GenerationSeries:
    positions = _grid_positions(timestamps, schema.interval, site_id)
    values = np.full(int(positions.max()) + 1, np.nan)
    values[positions] = power
    return GenerationSeries(
        site_id=site_id,
        postcode=postcode,
        start=timestamps.min(),
        values=values,
        interval=schema.interval,
        missing_count=int(np.isnan(values).sum()),
        timezone=schema.timezone,
    )


def align_series(series_list: Sequence[GenerationSeries]) -> List[GenerationSeries]:
    """Pad every series with gaps onto one grid from the earliest start to the latest end"""
    if not series_list:
        return []
    interval = series_list[0].interval
    for item in series_list:
        if item.interval != interval:
            raise IngestError(f"sampling interval {item.interval} differs from {interval}",
                              site_id=item.site_id)

    start = min(item.start for item in series_list)
    end = max(item.start + len(item) * interval for item in series_list)
    length = int((end - start) / interval)

    aligned = []
    for item in series_list:
        offset = item.start - start
        if offset % interval != pd.Timedelta(0):
            raise IngestError(
                f"non-uniform sampling: series starts at {item.start.isoformat()}, off the "
                f"{interval} grid shared with the other sites", site_id=item.site_id,
            )
        head = int(offset / interval)
        if head == 0 and len(item) == length:
            aligned.append(item)
            continue
        values = np.full(length, np.nan)
        values[head:head + len(item)] = item.values
        filled = np.zeros(length, dtype=bool)
        filled[head:head + len(item)] = item.filled_mask
        padded = length - len(item)
        logger.debug(f"{item.site_id}: padded {padded} absent samples onto the shared grid")
        aligned.append(replace(item, start=start, values=values, filled_mask=filled,
                               missing_count=item.missing_count + padded))
    return aligned


def _read_text_frame(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False)


def _load_long(path: Path, schema: CsvSchema) -> List[GenerationSeries]:
    frame = _read_text_frame(path)
    missing = [c for c in LONG_COLUMNS if c not in frame.columns]
    if missing:
        raise IngestError(f"missing columns {missing}; expected header {','.join(LONG_COLUMNS)}", line=1)

    timestamps = _parse_timestamps(frame["timestamp"], schema)
    power = _parse_power(frame["power"], "power")

    series = []
    for site_id, rows in frame.groupby("site_id", sort=True):
        if str(site_id).strip() == "":
            raise IngestError("empty site_id", line=_line_of(rows.index[0]))
        postcodes = rows["postcode"].str.strip().unique()
        if len(postcodes) != 1:
            raise IngestError(f"conflicting postcodes {list(postcodes)}", line=_line_of(rows.index[0]),
                              site_id=site_id)
        series.append(_assemble(str(site_id), postcodes[0], timestamps.loc[rows.index],
                                power[rows.index.to_numpy()], schema))
    return series


def _load_metadata(path: str) -> Dict[str, str]:
    frame = _read_text_frame(Path(path))
    if not {"site_id", "postcode"} <= set(frame.columns):
        raise IngestError("metadata file needs header site_id,postcode", line=1)
    return {row.site_id.strip(): row.postcode.strip() for row in frame.itertuples(index=False)}


def _load_wide(path: Path, schema: CsvSchema) -> List[GenerationSeries]:
    if not schema.metadata_path:
        raise IngestError("wide layout needs a site_id,postcode metadata file")
    postcodes = _load_metadata(schema.metadata_path)

    frame = _read_text_frame(path)
    if frame.shape[1] < 2:
        raise IngestError("wide layout needs a timestamp column and at least one site column", line=1)
    time_column, site_columns = frame.columns[0], list(frame.columns[1:])
    timestamps = _parse_timestamps(frame[time_column], schema)

    series = []
    for site_id in sorted(site_columns):
        if site_id not in postcodes:
            raise IngestError("site missing from metadata file", site_id=site_id)
        power = _parse_power(frame[site_id], site_id)
        series.append(_assemble(site_id, postcodes[site_id], timestamps, power, schema))
    return series


@track_performance("ingest", "load_csv")
def load_csv(path: Union[str, Path], schema: Optional[CsvSchema] = None) -> List[GenerationSeries]:
    """Load one file into series ordered by site_id, all on one shared grid"""
    schema = schema or CsvSchema()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")

    try:
        series = _load_long(path, schema) if schema.layout == "long" else _load_wide(path, schema)
    except pd.errors.ParserError as e:
        raise IngestError(f"malformed CSV: {e}") from e

    series = align_series(series)
    logger.info(f"📥 Loaded {len(series)} series from {path.name}")
    return series


def load_many(paths: Sequence[Union[str, Path]], schema: Optional[CsvSchema] = None) -> List[GenerationSeries]:
    """Load several files; site ids must be unique across files"""
    collected: Dict[str, GenerationSeries] = {}
    for path in paths:
        for item in load_csv(path, schema):
            if item.site_id in collected:
                raise IngestError(f"site appears in more than one input file ({path})", site_id=item.site_id)
            collected[item.site_id] = item
    return align_series([collected[key] for key in sorted(collected)])


def export_long_csv(series_list: Sequence[GenerationSeries], path: Union[str, Path]) -> Path:
    """Write series in the long layout; gaps become empty fields"""
    path = Path(path)
    stamp_cache: Dict[Tuple, np.ndarray] = {}
    frames = []
    for item in sorted(series_list, key=lambda s: s.site_id):
        key = (item.start, item.interval, len(item))
        if key not in stamp_cache:
            stamp_cache[key] = item.timestamps.tz_convert("UTC").strftime(ISO_FORMAT).to_numpy()
        frames.append(pd.DataFrame({
            "site_id": item.site_id,
            "postcode": item.postcode,
            "timestamp": stamp_cache[key],
            "power": item.values,
        }))

    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=LONG_COLUMNS)
    frame.to_csv(path, index=False, na_rep="", lineterminator="\n")
    return path


# ---------------------------------------------------------------------------
# Cleaning
# ---------------------------------------------------------------------------

def clean(series: GenerationSeries,
          policy: Optional[CleaningPolicy] = None) -> Union[GenerationSeries, Exclusion]:
    """Exclude series with too many gaps, otherwise fill gaps by LOCF"""
    policy = policy or CleaningPolicy()
    gaps = series.gap_mask
    missing = int(gaps.sum())

    if missing == 0:
        return series.with_values(series.values.copy())

    # raw gaps plus anything an earlier pass already filled
    total_missing = missing + int(series.filled_mask.sum()) + series.leading_filled
    if total_missing > policy.max_missing:
        return Exclusion(series.site_id, "missing",
                         f"{total_missing} missing points > {policy.max_missing}")

    filled = pd.Series(series.values).ffill().to_numpy()
    leading = np.isnan(filled)
    filled[leading] = policy.leading_fill

    return series.with_values(
        filled,
        missing_count=total_missing,
        filled_mask=series.filled_mask | (gaps & ~leading),
        leading_filled=series.leading_filled + int(leading.sum()),
    )


def normalize_per_unit(series: GenerationSeries) -> Union[GenerationSeries, Exclusion]:
    """Divide by the full-span maximum"""
    peak = float(np.nanmax(series.values)) if not np.all(np.isnan(series.values)) else 0.0
    if peak <= 0.0:
        return Exclusion(series.site_id, "dead", "no positive generation over the span")
    return series.with_values(series.values / peak, per_unit=True)


def _month_keys(timestamps: pd.DatetimeIndex) -> np.ndarray:
    return np.asarray(timestamps.year * 12 + timestamps.month - 1)


def _clipping_days(values: np.ndarray, timestamps: pd.DatetimeIndex,
                   policy: CurtailmentPolicy) -> np.ndarray:
    """Boolean per sample: a flat sub-maximum run inside the local midday window starts here"""
    run = policy.plateau_samples
    if values.size < run:
        return np.zeros(values.size, dtype=bool)

    hours = np.asarray(timestamps.hour + timestamps.minute / 60.0)
    midday = (hours >= policy.midday_start_hour) & (hours < policy.midday_end_hour)
    ceiling = float(np.max(values)) - policy.plateau_tolerance

    windows = sliding_window_view(values, run)
    spread = windows.max(axis=1) - windows.min(axis=1)
    flat = (
        (spread <= policy.plateau_tolerance)
        & (windows.min(axis=1) >= policy.plateau_min_level)
        & (windows.max(axis=1) <= ceiling)
        & sliding_window_view(midday, run).all(axis=1)
    )
    starts = np.zeros(values.size, dtype=bool)
    starts[:flat.size] = flat
    return starts


def curtailment_screen(series: GenerationSeries,
                       policy: Optional[CurtailmentPolicy] = None) -> ScreenResult:
    """Heuristic screen for persistent negative generation or flat-topped clipping"""
    policy = policy or CurtailmentPolicy()
    timestamps = series.local_timestamps
    months = _month_keys(timestamps)

    negative_months = len(np.unique(months[series.values < -policy.negative_epsilon]))

    starts = _clipping_days(series.values, timestamps, policy)
    day_keys = np.asarray(timestamps.year * 400 + timestamps.dayofyear)
    flagged = pd.DataFrame({"month": months[starts], "day": day_keys[starts]}).drop_duplicates()
    days_per_month = flagged.groupby("month").size()
    clipping_months = int((days_per_month >= policy.min_days_per_month).sum())

    excluded = negative_months > policy.max_months or clipping_months > policy.max_months
    if excluded:
        logger.warning(
            f"⚠️ {series.site_id}: curtailment screen excluded the series "
            f"(negative months={negative_months}, clipping months={clipping_months})"
        )
    return ScreenResult(
        verdict=ScreenVerdict.EXCLUDED if excluded else ScreenVerdict.KEEP,
        negative_months=negative_months,
        clipping_months=clipping_months,
    )


@track_performance("ingest", "screen_fleet")
def screen_fleet(series_list: Sequence[GenerationSeries],
                 cleaning: Optional[CleaningPolicy] = None,
                 curtailment: Optional[CurtailmentPolicy] = None,
                 normalize: bool = True) -> Tuple[List[GenerationSeries], List[Exclusion]]:
    """clean -> normalize_per_unit -> curtailment_screen for every site"""
    kept, exclusions = [], []
    for item in sorted(series_list, key=lambda s: s.site_id):
        cleaned = clean(item, cleaning)
        if isinstance(cleaned, Exclusion):
            exclusions.append(cleaned)
            continue
        if normalize:
            cleaned = normalize_per_unit(cleaned)
            if isinstance(cleaned, Exclusion):
                exclusions.append(cleaned)
                continue
        screen = curtailment_screen(cleaned, curtailment)
        if screen.verdict is ScreenVerdict.EXCLUDED:
            exclusions.append(Exclusion(
                item.site_id, "curtailment",
                f"negative months={screen.negative_months}, clipping months={screen.clipping_months}",
            ))
            continue
        kept.append(cleaned)

    for exclusion in exclusions:
        logger.warning(f"🚫 Excluded {exclusion.site_id}: {exclusion.reason} ({exclusion.detail})")
    logger.info(f"🧹 Cleaning kept {len(kept)} of {len(series_list)} series")
    return kept, exclusions


# ---------------------------------------------------------------------------
# Regions
# ---------------------------------------------------------------------------

def parse_region_spec(entries: Sequence[str]) -> List[PostcodeRange]:
    """Parse entries like '5000-5100' or '5540'; overlapping ranges are rejected"""
    ranges = []
    for entry in entries:
        text = str(entry).strip()
        try:
            if "-" in text:
                low, high = (int(part) for part in text.split("-", 1))
            else:
                low = high = int(text)
        except ValueError:
            raise ContractViolation(f"invalid postcode range '{entry}'")
        if low > high:
            raise ContractViolation(f"postcode range '{entry}' is reversed")
        ranges.append(PostcodeRange(low, high))

    ordered = sorted(ranges, key=lambda r: r.low)
    for left, right in zip(ordered, ordered[1:]):
        if right.low <= left.high:
            raise ContractViolation(f"postcode ranges {left.label} and {right.label} overlap")
    return ranges


def group_by_region(series_list: Sequence[GenerationSeries],
                    region_spec: Optional[Sequence[PostcodeRange]] = None
                    ) -> Tuple[List[RegionGroup], List[str]]:
    """Partition sites by the first matching range; returns groups and unmatched site ids"""
    for item in series_list:
        if not str(item.postcode).strip():
            raise ContractViolation(f"site {item.site_id} has no postcode")

    site_ids = sorted(item.site_id for item in series_list)
    if not region_spec:
        return ([RegionGroup("all", tuple(site_ids))] if site_ids else []), []

    ranges = list(region_spec)
    ordered = sorted(ranges, key=lambda r: r.low)
    for left, right in zip(ordered, ordered[1:]):
        if right.low <= left.high:
            raise ContractViolation(f"postcode ranges {left.label} and {right.label} overlap")

    members: Dict[str, List[str]] = {r.label: [] for r in ranges}
    unmatched = []
    for item in sorted(series_list, key=lambda s: s.site_id):
        match = next((r for r in ranges if r.contains(item.postcode)), None)
        if match is None:
            unmatched.append(item.site_id)
        else:
            members[match.label].append(item.site_id)

    groups = []
    for postcode_range in ranges:
        sites = members[postcode_range.label]
        if not sites:
            logger.warning(f"⚠️ Region {postcode_range.label} matched no sites; omitted")
            continue
        groups.append(RegionGroup(postcode_range.label, tuple(sites)))
    if unmatched:
        logger.warning(f"⚠️ {len(unmatched)} sites matched no region: {unmatched[:10]}")
    return groups, unmatched
