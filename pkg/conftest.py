"""
Shared fixtures: an independent reference WPE implementation and the frozen
synthetic fleet, built once per test session.
"""

import logging
import math
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pytest

from analysis.detector import analyze_region
from analysis.profiler import WindowSpec, profile_fleet
from analysis.wpe_core import EmbeddingConfig
from utils.ingest import screen_fleet
from utils.synth import default_fleet_spec, generate_fleet


# ---------------------------------------------------------------------------
# Reference oracle
# ---------------------------------------------------------------------------

def naive_pattern(vector: Sequence[float]) -> Tuple[int, ...]:
    """Indices of the vector in ascending value order, ties by position"""
    return tuple(sorted(range(len(vector)), key=lambda k: (vector[k], k)))


def naive_weights(window: Sequence[float], d: int, tau: int) -> Dict[Tuple[int, ...], float]:
    weights: Dict[Tuple[int, ...], float] = {}
    for t in range(len(window) - (d - 1) * tau):
        vector = [float(window[t + k * tau]) for k in range(d)]
        mean = sum(vector) / d
        weight = sum((v - mean) ** 2 for v in vector) / d
        key = naive_pattern(vector)
        weights[key] = weights.get(key, 0.0) + weight
    return weights


def naive_wpe(window: Sequence[float], d: int, tau: int) -> Optional[float]:
    """Normalised WPE straight from the definition; None for a zero-weight window"""
    weights = naive_weights(window, d, tau)
    total = sum(weights.values())
    if total == 0:
        return None
    entropy = 0.0
    for weight in weights.values():
        if weight > 0:
            p = weight / total
            entropy -= p * math.log2(p)
    return entropy / math.log2(math.factorial(d))


def naive_mean_profile(rows: Sequence[Sequence[float]]) -> np.ndarray:
    out = []
    for column in zip(*rows):
        defined = [v for v in column if not math.isnan(v)]
        out.append(sum(defined) / len(defined) if defined else math.nan)
    return np.array(out)


def naive_pearson(x: Sequence[float], y: Sequence[float]) -> float:
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full regional fleet run, deselect with -m \"not slow\"")


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


@pytest.fixture(autouse=True)
def reset_logging():
    """Drop handlers a command-line run attached to the root logger"""
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        if type(handler) in (logging.StreamHandler, logging.FileHandler):
            root.removeHandler(handler)
            handler.close()
    logging.captureWarnings(False)


# ---------------------------------------------------------------------------
# Synthetic fleet
# ---------------------------------------------------------------------------

FAULTED_SITES = {"site_000", "site_008", "site_010"}


@pytest.fixture(scope="session")
def fleet_spec():
    return default_fleet_spec()


@pytest.fixture(scope="session")
def raw_fleet(fleet_spec):
    return generate_fleet(fleet_spec)


@pytest.fixture(scope="session")
def clean_fleet(raw_fleet):
    kept, exclusions = screen_fleet(raw_fleet)
    assert not exclusions, f"fixture sites excluded: {exclusions}"
    return kept


@pytest.fixture(scope="session")
def fleet_profiles(clean_fleet):
    return profile_fleet(clean_fleet, EmbeddingConfig(6, 3), WindowSpec(), workers=4)


@pytest.fixture(scope="session")
def normal_profiles(fleet_profiles):
    return [p for p in fleet_profiles if p.site_id not in FAULTED_SITES]


@pytest.fixture(scope="session")
def fleet_analysis(fleet_profiles):
    return analyze_region("all", fleet_profiles)
