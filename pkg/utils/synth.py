"""
Synthetic PV Fleet Generator
Builds a regional fleet from a seasonal clear-sky envelope, a cloud process
shared by every site in a weather zone and small per-site variation, then
injects the fault classes the detector is meant to find.

All randomness comes from numpy's PCG64 generator seeded with integers, so a
spec reproduces the same fleet bit for bit.
"""

import json
import logging
import zlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.signal import lfilter
from scipy.special import expit

from analysis.errors import ContractViolation
from utils.config import load_toml
from utils.ingest import GenerationSeries, PostcodeRange, parse_region_spec
from utils.performance_tracker import track_performance

logger = logging.getLogger(__name__)

CLOUD_AR_COEFFICIENT = 0.78
DAY_STATE_PERSISTENCE = 0.5
MIDWINTER_DAY = 172
CLEAR, PARTLY_CLOUDY, OVERCAST = 0, 1, 2


class FaultKind(Enum):
    PARTIAL_SHADING = "partial_shading"
    CURTAILMENT_CLIPPING = "curtailment_clipping"
    RAPID_FLUCTUATION = "rapid_fluctuation"
    DEAD_OUTPUT = "dead_output"


DEFAULT_FAULT_PARAMS: Dict[FaultKind, Dict[str, float]] = {
    FaultKind.PARTIAL_SHADING: {"band_start_hour": 9.0, "band_end_hour": 15.0, "taper_minutes": 20.0},
    FaultKind.CURTAILMENT_CLIPPING: {"flutter": 0.25},
    FaultKind.RAPID_FLUCTUATION: {},
    FaultKind.DEAD_OUTPUT: {},
}


@dataclass
class FaultSpec:
    """One injected fault over the half-open interval [start, end)"""
    site_id: str
    kind: FaultKind
    start: pd.Timestamp
    end: pd.Timestamp
    severity: float
    params: Dict[str, float] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        self.kind = FaultKind(self.kind)
        self.start = _utc(self.start)
        self.end = _utc(self.end)
        if self.end <= self.start:
            raise ContractViolation(f"fault on {self.site_id} ends before it starts")
        if not 0.0 <= self.severity <= 1.0:
            raise ContractViolation(f"fault severity {self.severity} outside [0, 1]")
        unknown = set(self.params) - set(DEFAULT_FAULT_PARAMS[self.kind])
        if unknown:
            raise ContractViolation(f"unknown parameters {sorted(unknown)} for {self.kind.value}")
        self.params = {**DEFAULT_FAULT_PARAMS[self.kind], **self.params}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "site_id": self.site_id,
            "kind": self.kind.value,
            "start": self.start.isoformat(),
            "end": self.end.isoformat(),
            "severity": self.severity,
            "params": dict(sorted(self.params.items())),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "FaultSpec":
        try:
            return cls(
                site_id=str(payload["site_id"]),
                kind=FaultKind(payload["kind"]),
                start=payload["start"],
                end=payload["end"],
                severity=float(payload["severity"]),
                params={k: float(v) for k, v in payload.get("params", {}).items()},
                seed=int(payload.get("seed", 0)),
            )
        except KeyError as e:
            raise ContractViolation(f"fault entry missing field {e}")
        except ValueError as e:
            raise ContractViolation(f"invalid fault entry: {e}")


@dataclass
class FleetSpec:
    """Synthetic fleet description; latitude_band is the seasonal swing of day length in hours"""
    n_sites: int = 23
    start: pd.Timestamp = pd.Timestamp("2019-01-01", tz="UTC")
    days: int = 365
    interval: pd.Timedelta = pd.Timedelta(minutes=5)
    latitude_band: float = 2.4
    weather_seed: int = 2019
    per_site_noise: float = 0.01
    postcode_assignment: List[str] = field(default_factory=list)
    weather_zones: List[str] = field(default_factory=list)
    cloudiness: float = 1.0
    shape_exponents: Tuple[float, float] = (0.8, 2.0)
    max_site_lag: int = 2
    faults: List[FaultSpec] = field(default_factory=list)

    def __post_init__(self):
        self.start = _utc(self.start)
        self.interval = pd.Timedelta(self.interval)
        self.shape_exponents = tuple(float(g) for g in self.shape_exponents)
        if self.n_sites < 2:
            raise ContractViolation(f"a fleet needs at least 2 sites, got {self.n_sites}")
        if self.days < 1:
            raise ContractViolation("fleet span must be at least one day")
        if self.interval <= pd.Timedelta(0) or pd.Timedelta(days=1) % self.interval != pd.Timedelta(0):
            raise ContractViolation(f"interval {self.interval} does not divide one day evenly")
        if not self.postcode_assignment:
            self.postcode_assignment = ["5000"] * self.n_sites
        self.postcode_assignment = [str(p) for p in self.postcode_assignment]
        if len(self.postcode_assignment) != self.n_sites:
            raise ContractViolation(
                f"{len(self.postcode_assignment)} postcodes given for {self.n_sites} sites"
            )
        if self.per_site_noise < 0 or self.cloudiness < 0 or self.max_site_lag < 0:
            raise ContractViolation("per_site_noise, cloudiness and max_site_lag must be >= 0")
        if len(self.shape_exponents) != 2 or min(self.shape_exponents) <= 0:
            raise ContractViolation("shape_exponents must be two positive values")
        parse_region_spec(self.weather_zones)

        sites = set(self.site_ids)
        end = self.end
        for fault in self.faults:
            if fault.site_id not in sites:
                raise ContractViolation(f"fault targets unknown site {fault.site_id}")
            if fault.start < self.start or fault.end > end:
                raise ContractViolation(f"fault on {fault.site_id} falls outside the fleet span")

    @property
    def samples_per_day(self) -> int:
        return int(pd.Timedelta(days=1) / self.interval)

    @property
    def n_samples(self) -> int:
        return self.days * self.samples_per_day

    @property
    def end(self) -> pd.Timestamp:
        return self.start + pd.Timedelta(days=self.days)

    @property
    def site_ids(self) -> List[str]:
        return [f"site_{i:03d}" for i in range(self.n_sites)]

    @property
    def zone_ranges(self) -> List[PostcodeRange]:
        return parse_region_spec(self.weather_zones)

    def zone_of(self, postcode: str) -> str:
        match = next((z for z in self.zone_ranges if z.contains(postcode)), None)
        return match.label if match else postcode


def _utc(value) -> pd.Timestamp:
    stamp = pd.Timestamp(value)
    return stamp.tz_localize("UTC") if stamp.tzinfo is None else stamp.tz_convert("UTC")


def _zone_key(zone: str) -> int:
    return zlib.crc32(zone.encode("utf-8"))


def _generator(*words: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(list(words)))


def _winterness(day_of_year: np.ndarray) -> np.ndarray:
    """1 at the southern midwinter, 0 at midsummer"""
    return (1.0 + np.cos(2.0 * np.pi * (day_of_year - MIDWINTER_DAY) / 365.0)) / 2.0


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def _day_states(spec: FleetSpec, rng: np.random.Generator, winterness: np.ndarray) -> np.ndarray:
    """Markov chain of clear / partly cloudy / overcast days"""
    partly = np.clip((0.15 + 0.25 * winterness) * spec.cloudiness, 0.0, 1.0)
    overcast = np.clip((0.05 + 0.35 * winterness) * spec.cloudiness, 0.0, 1.0 - partly)
    states = np.empty(winterness.size, dtype=int)
    previous = CLEAR
    for day in range(winterness.size):
        if day and rng.random() < DAY_STATE_PERSISTENCE:
            states[day] = previous
        else:
            draw = rng.random()
            if draw < overcast[day]:
                states[day] = OVERCAST
            elif draw < overcast[day] + partly[day]:
                states[day] = PARTLY_CLOUDY
            else:
                states[day] = CLEAR
        previous = states[day]
    return states


def _zone_cloud(spec: FleetSpec, zone: str, length: int) -> np.ndarray:
    """Multiplicative cloud attenuation in (0, 1], one value per sample"""
    rng = _generator(spec.weather_seed, 0, _zone_key(zone))
    spd = spec.samples_per_day
    n_days = -(-length // spd)
    day_stamps = pd.date_range(spec.start, periods=n_days, freq="D")
    states = np.repeat(_day_states(spec, rng, _winterness(np.asarray(day_stamps.dayofyear))), spd)[:length]

    shocks = rng.normal(0.0, np.sqrt(1.0 - CLOUD_AR_COEFFICIENT ** 2), length)
    z = lfilter([1.0], [1.0, -CLOUD_AR_COEFFICIENT], shocks)
    return np.select(
        [states == CLEAR, states == PARTLY_CLOUDY],
        [1.0 - 0.02 * expit(z), 0.3 + 0.7 * expit(2.5 * z)],
        default=0.2 + 0.15 * expit(z),
    )


def _clear_sky_phase(spec: FleetSpec, timestamps: pd.DatetimeIndex) -> Tuple[np.ndarray, np.ndarray]:
    """Fraction of the daylight period elapsed (NaN at night) and the seasonal peak"""
    winterness = _winterness(np.asarray(timestamps.dayofyear, dtype=float))
    day_length = 12.0 - spec.latitude_band * (2.0 * winterness - 1.0)
    hours = np.asarray(timestamps.hour + timestamps.minute / 60.0 + timestamps.second / 3600.0)
    phase = (hours - (12.0 - day_length / 2.0)) / day_length
    phase = np.where((phase > 0.0) & (phase < 1.0), phase, np.nan)
    return phase, 1.0 - 0.4 * winterness


@track_performance("synth", "generate_fleet")
def generate_fleet(spec: FleetSpec) -> List[GenerationSeries]:
    """Per-unit generation of every site, with the spec's faults injected"""
    timestamps = pd.date_range(spec.start, periods=spec.n_samples, freq=spec.interval)
    phase, peak = _clear_sky_phase(spec, timestamps)
    daylight = ~np.isnan(phase)
    sine = np.where(daylight, np.sin(np.pi * np.nan_to_num(phase)), 0.0)
    exponents = np.linspace(spec.shape_exponents[0], spec.shape_exponents[1], spec.n_sites)

    clouds: Dict[str, np.ndarray] = {}
    faults_by_site: Dict[str, List[FaultSpec]] = {}
    for fault in spec.faults:
        faults_by_site.setdefault(fault.site_id, []).append(fault)

    fleet = []
    for index, (site_id, postcode) in enumerate(zip(spec.site_ids, spec.postcode_assignment)):
        zone = spec.zone_of(postcode)
        if zone not in clouds:
            clouds[zone] = _zone_cloud(spec, zone, spec.n_samples + spec.max_site_lag)
        lag = index % (spec.max_site_lag + 1)
        cloud = clouds[zone][lag:lag + spec.n_samples]

        rng = _generator(spec.weather_seed, 1, index)
        jitter = 1.0 + spec.per_site_noise * rng.standard_normal(spec.n_samples)
        values = np.where(daylight, peak * sine ** exponents[index] * cloud * jitter, 0.0)
        values = np.clip(values, 0.0, None) + 0.0
        top = values.max()
        if top > 0:
            values = values / top

        series = GenerationSeries(site_id, postcode, spec.start, values, spec.interval, per_unit=True)
        for fault in faults_by_site.get(site_id, []):
            series = inject(series, fault)
        fleet.append(series)

    zones = sorted(clouds)
    logger.info(f"☀️ Generated {spec.n_sites} sites over {spec.days} days in {len(zones)} weather zones "
                f"({len(spec.faults)} faults)")
    return fleet


# ---------------------------------------------------------------------------
# Fault injection
# ---------------------------------------------------------------------------

def _shading_profile(hours: np.ndarray, params: Mapping[str, float]) -> np.ndarray:
    """1 inside the shaded band, cosine ramps of taper_minutes either side"""
    start, end = params["band_start_hour"], params["band_end_hour"]
    taper = params["taper_minutes"] / 60.0
    profile = ((hours >= start) & (hours <= end)).astype(float)
    if taper > 0:
        before = (hours > start - taper) & (hours < start)
        after = (hours > end) & (hours < end + taper)
        profile[before] = 0.5 - 0.5 * np.cos(np.pi * (hours[before] - (start - taper)) / taper)
        profile[after] = 0.5 + 0.5 * np.cos(np.pi * (hours[after] - end) / taper)
    return profile


def _clip_days(values: np.ndarray, day_index: np.ndarray, severity: float, flutter: float,
               rng: np.random.Generator) -> np.ndarray:
    out = values.copy()
    for day in np.unique(day_index):
        in_day = day_index == day
        day_values = out[in_day]
        daily_max = day_values.max()
        if daily_max <= 0:
            continue
        cap = (1.0 - severity) * daily_max
        capped = day_values >= cap
        free = (day_values > 0) & ~capped
        amplitude = flutter * severity * daily_max
        day_values[free] += rng.uniform(-amplitude, amplitude, int(free.sum()))
        day_values = np.clip(day_values, 0.0, cap)
        out[in_day] = day_values
    return out


def inject(series: GenerationSeries, fault: FaultSpec) -> GenerationSeries:
    """Apply one fault inside its interval; severity 0 leaves the series unchanged"""
    timestamps = series.timestamps
    span_end = timestamps[-1] + series.interval
    if fault.start < timestamps[0] or fault.end > span_end:
        raise ContractViolation(
            f"fault interval {fault.start.isoformat()}..{fault.end.isoformat()} "
            f"outside the span of {series.site_id}"
        )
    if fault.severity == 0.0:
        return series.with_values(series.values.copy())

    window = np.asarray((timestamps >= fault.start) & (timestamps < fault.end))
    values = series.values.copy()
    segment = values[window]
    stamps = timestamps[window]
    rng = _generator(fault.seed, _zone_key(series.site_id), _zone_key(fault.kind.value))

    if fault.kind is FaultKind.DEAD_OUTPUT:
        segment = np.zeros_like(segment)
    elif fault.kind is FaultKind.PARTIAL_SHADING:
        hours = np.asarray(stamps.hour + stamps.minute / 60.0)
        segment = segment * (1.0 - fault.severity * _shading_profile(hours, fault.params))
    elif fault.kind is FaultKind.RAPID_FLUCTUATION:
        factors = rng.uniform(1.0 - fault.severity, 1.0, segment.size)
        segment = np.where(segment > 0, segment * factors, segment)
    else:
        day_index = np.asarray((stamps - series.start) // pd.Timedelta(days=1))
        segment = _clip_days(segment, day_index, fault.severity, fault.params["flutter"], rng)

    values[window] = segment + 0.0
    logger.debug(f"{series.site_id}: injected {fault.kind.value} severity={fault.severity} "
                 f"over {int(window.sum())} samples")
    return series.with_values(values)


# ---------------------------------------------------------------------------
# Stock fleets
# ---------------------------------------------------------------------------

def default_faults(year: int = 2019) -> List[FaultSpec]:
    """Rapid fluctuation in summer, seasonal shading through the low-sun months, clipping in spring"""
    return [
        FaultSpec("site_000", FaultKind.PARTIAL_SHADING,
                  f"{year}-04-01", f"{year}-09-01", severity=0.9, seed=2),
        FaultSpec("site_008", FaultKind.RAPID_FLUCTUATION,
                  f"{year}-01-01", f"{year}-04-01", severity=0.5, seed=1),
        FaultSpec("site_010", FaultKind.CURTAILMENT_CLIPPING,
                  f"{year}-10-01", f"{year + 1}-01-01", severity=0.4, seed=3),
    ]


def default_fleet_spec() -> FleetSpec:
    """23 sites in one postcode over 2019: 20 normal, 3 faulted"""
    return FleetSpec(faults=default_faults())


def regional_fleet_spec() -> FleetSpec:
    """105 sites over three postcode regions, each its own weather zone"""
    regions = [(5000, 5100, 60), (5203, 5255, 30), (5540, 5540, 15)]
    postcodes = []
    for low, high, count in regions:
        span = high - low + 1
        postcodes += [str(low + (i * 7) % span) for i in range(count)]
    faults = default_faults() + [
        FaultSpec("site_060", FaultKind.PARTIAL_SHADING, "2019-04-01", "2019-09-01", severity=0.9, seed=4),
        FaultSpec("site_095", FaultKind.RAPID_FLUCTUATION, "2019-01-01", "2019-04-01", severity=0.5, seed=5),
    ]
    return FleetSpec(
        n_sites=len(postcodes),
        postcode_assignment=postcodes,
        weather_zones=[f"{low}-{high}" for low, high, _ in regions],
        faults=faults,
    )


def region_entries(spec: FleetSpec) -> List[str]:
    """Region spec matching the fleet's weather zones"""
    return [z.label for z in spec.zone_ranges]


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def fleet_spec_from_dict(payload: Mapping[str, Any]) -> FleetSpec:
    fleet = dict(payload.get("fleet", {}))
    known = {"n_sites", "start", "days", "interval_minutes", "latitude_band", "weather_seed",
             "per_site_noise", "postcodes", "weather_zones", "cloudiness", "shape_exponents",
             "max_site_lag"}
    unknown = set(fleet) - known
    if unknown:
        raise ContractViolation(f"unknown fleet settings {sorted(unknown)}")

    kwargs: Dict[str, Any] = {}
    for key in ("n_sites", "days", "weather_seed", "max_site_lag"):
        if key in fleet:
            kwargs[key] = int(fleet[key])
    for key in ("latitude_band", "per_site_noise", "cloudiness"):
        if key in fleet:
            kwargs[key] = float(fleet[key])
    if "start" in fleet:
        kwargs["start"] = str(fleet["start"])
    if "interval_minutes" in fleet:
        kwargs["interval"] = pd.Timedelta(minutes=float(fleet["interval_minutes"]))
    if "postcodes" in fleet:
        kwargs["postcode_assignment"] = [str(p) for p in fleet["postcodes"]]
    if "weather_zones" in fleet:
        kwargs["weather_zones"] = [str(z) for z in fleet["weather_zones"]]
    if "shape_exponents" in fleet:
        kwargs["shape_exponents"] = tuple(fleet["shape_exponents"])

    kwargs["faults"] = [FaultSpec.from_dict(f) for f in payload.get("faults", [])]
    return FleetSpec(**kwargs)


def load_fleet_spec(path: Union[str, Path]) -> FleetSpec:
    """FleetSpec from a TOML file with a [fleet] table and [[faults]] entries"""
    return fleet_spec_from_dict(load_toml(path))


def write_faults_json(faults: Sequence[FaultSpec], path: Union[str, Path]) -> Path:
    path = Path(path)
    payload = {"faults": [f.to_dict() for f in sorted(faults, key=lambda f: (f.site_id, f.start))]}
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path


def read_faults_json(path: Union[str, Path]) -> List[FaultSpec]:
    payload = json.loads(Path(path).read_text())
    return [FaultSpec.from_dict(f) for f in payload.get("faults", [])]
