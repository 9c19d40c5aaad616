"""
Weighted Permutation Entropy Kernel
Ordinal patterns, vector weights, weighted pattern distributions and the
normalised WPE of a single window of samples.

Patterns are indexed by their Lehmer code into a flat histogram of d! bins.
Ties inside an embedding vector are ranked by position (earlier sample gets
the smaller rank).
"""

import warnings
from dataclasses import dataclass
from math import factorial, log2
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from analysis.errors import ContractViolation, ShortWindowWarning

MIN_DIMENSION = 3
MAX_DIMENSION = 7
# Windows shorter than RECOMMENDED_FACTOR * d! give unreliable pattern frequencies
RECOMMENDED_FACTOR = 5


@dataclass(frozen=True)
class EmbeddingConfig:
    """Embedding dimension d and time delay tau"""
    d: int = 6
    tau: int = 3

    def __post_init__(self):
        if isinstance(self.d, bool) or not isinstance(self.d, (int, np.integer)):
            raise ContractViolation(f"embedding dimension must be an integer, got {self.d!r}")
        if isinstance(self.tau, bool) or not isinstance(self.tau, (int, np.integer)):
            raise ContractViolation(f"time delay must be an integer, got {self.tau!r}")
        if not MIN_DIMENSION <= self.d <= MAX_DIMENSION:
            raise ContractViolation(
                f"embedding dimension d={self.d} outside [{MIN_DIMENSION}, {MAX_DIMENSION}]"
            )
        if self.tau < 1:
            raise ContractViolation(f"time delay tau={self.tau} must be >= 1")

    @property
    def span(self) -> int:
        """Distance in samples between the first and last element of a vector"""
        return (self.d - 1) * self.tau

    @property
    def min_window(self) -> int:
        return self.span + 1

    @property
    def n_patterns(self) -> int:
        return factorial(self.d)

    @property
    def recommended_window(self) -> int:
        return RECOMMENDED_FACTOR * self.n_patterns

    def n_vectors(self, n_samples: int) -> int:
        return n_samples - self.span

    def label(self) -> str:
        return f"d={self.d},tau={self.tau}"


@dataclass(frozen=True)
class OrdinalPattern:
    """Rank of each element of an embedding vector, 1-based"""
    ranks: Tuple[int, ...]

    def __post_init__(self):
        if sorted(self.ranks) != list(range(1, len(self.ranks) + 1)):
            raise ContractViolation(f"{self.ranks} is not a permutation of 1..{len(self.ranks)}")

    @property
    def d(self) -> int:
        return len(self.ranks)

    @property
    def code(self) -> int:
        """Lehmer code in [0, d!)"""
        code = 0
        for i, rank in enumerate(self.ranks):
            smaller_after = sum(1 for later in self.ranks[i + 1:] if later < rank)
            code += smaller_after * factorial(self.d - 1 - i)
        return code

    @classmethod
    def from_code(cls, code: int, d: int) -> "OrdinalPattern":
        if not 0 <= code < factorial(d):
            raise ContractViolation(f"pattern code {code} outside [0, {factorial(d)})")
        available = list(range(1, d + 1))
        ranks = []
        for i in range(d):
            digit, code = divmod(code, factorial(d - 1 - i))
            ranks.append(available.pop(digit))
        return cls(tuple(ranks))

    def __str__(self) -> str:
        return "-".join(str(r) for r in self.ranks)


@dataclass
class WeightedDistribution:
    """Weighted probability of every ordinal pattern, indexed by Lehmer code"""
    probs: np.ndarray
    total_weight: float

    @property
    def defined(self) -> bool:
        return self.total_weight > 0


@dataclass(frozen=True)
class WpeValue:
    """Normalised WPE; normalized is None when the window carries no weight"""
    normalized: Optional[float]
    raw_bits: float

    @property
    def is_undefined(self) -> bool:
        return self.normalized is None

    def as_float(self) -> float:
        return float("nan") if self.normalized is None else self.normalized


UNDEFINED = WpeValue(normalized=None, raw_bits=0.0)


def _as_vector(vector: Sequence[float], d: Optional[int]) -> np.ndarray:
    values = np.asarray(vector, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise ContractViolation("embedding vector must be a non-empty 1-D sequence")
    if d is not None and values.size != d:
        raise ContractViolation(f"embedding vector has length {values.size}, expected d={d}")
    return values


def _as_window(window: Sequence[float], cfg: EmbeddingConfig) -> np.ndarray:
    values = np.asarray(window, dtype=float)
    if values.ndim != 1:
        raise ContractViolation("window must be a 1-D sequence of samples")
    if values.size < cfg.min_window:
        raise ContractViolation(
            f"window of {values.size} samples holds no embedding vector for {cfg.label()} "
            f"(needs >= {cfg.min_window})"
        )
    if not np.all(np.isfinite(values)):
        raise ContractViolation("window contains non-finite samples")
    return values


def ordinal_pattern(vector: Sequence[float], d: Optional[int] = None) -> OrdinalPattern:
    """Rank pattern of a vector, ties broken by position"""
    values = _as_vector(vector, d)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=int)
    ranks[order] = np.arange(1, values.size + 1)
    return OrdinalPattern(tuple(int(r) for r in ranks))


def vector_weight(vector: Sequence[float], d: Optional[int] = None) -> float:
    """Population variance of the vector"""
    values = _as_vector(vector, d)
    return float(np.var(values))


def embedding_vectors(samples: np.ndarray, cfg: EmbeddingConfig) -> np.ndarray:
    """All vectors (x_t, x_t+tau, ..., x_t+(d-1)tau) as a read-only (n, d) view"""
    return sliding_window_view(samples, cfg.span + 1)[:, ::cfg.tau]


def lehmer_codes(vectors: np.ndarray) -> np.ndarray:
    """Lehmer code of every row's ordinal pattern, without sorting"""
    n, d = vectors.shape
    codes = np.zeros(n, dtype=np.int64)
    for i in range(d - 1):
        smaller_after = np.zeros(n, dtype=np.int64)
        for j in range(i + 1, d):
            smaller_after += vectors[:, j] < vectors[:, i]
        codes += smaller_after * factorial(d - 1 - i)
    return codes


def pattern_codes_and_weights(samples: Sequence[float],
                              cfg: EmbeddingConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Pattern code and weight of every embedding vector of a series"""
    values = _as_window(samples, cfg)
    vectors = embedding_vectors(values, cfg)
    return lehmer_codes(vectors), np.var(vectors, axis=1)


def pattern_histogram(codes: np.ndarray, weights: np.ndarray, cfg: EmbeddingConfig) -> np.ndarray:
    return np.bincount(codes, weights=weights, minlength=cfg.n_patterns)


def wpe_from_histogram(histogram: np.ndarray, cfg: EmbeddingConfig) -> WpeValue:
    total = float(histogram.sum())
    if total <= 0.0:
        return UNDEFINED
    probs = histogram[histogram > 0] / total
    # 0·log0 = 0: empty bins are dropped above
    raw_bits = float(-np.sum(probs * np.log2(probs))) + 0.0
    normalized = min(max(raw_bits / log2(cfg.n_patterns), 0.0), 1.0)
    return WpeValue(normalized=normalized, raw_bits=raw_bits)


def weighted_distribution(window: Sequence[float], cfg: EmbeddingConfig) -> WeightedDistribution:
    codes, weights = pattern_codes_and_weights(window, cfg)
    histogram = pattern_histogram(codes, weights, cfg)
    total = float(histogram.sum())
    if total <= 0.0:
        return WeightedDistribution(probs=np.zeros(cfg.n_patterns), total_weight=0.0)
    return WeightedDistribution(probs=histogram / total, total_weight=total)


def check_window_length(n_samples: int, cfg: EmbeddingConfig) -> bool:
    """Warn when the window is below the 5·d! recommendation; returns True when adequate"""
    if n_samples > cfg.recommended_window:
        return True
    warnings.warn(
        f"window of {n_samples} samples is not above 5·d! = {cfg.recommended_window} "
        f"for {cfg.label()}; WPE estimates will be biased",
        ShortWindowWarning,
        stacklevel=3,
    )
    return False


def wpe(window: Sequence[float], cfg: EmbeddingConfig) -> WpeValue:
    """Normalised weighted permutation entropy of one window"""
    codes, weights = pattern_codes_and_weights(window, cfg)
    check_window_length(len(codes) + cfg.span, cfg)
    return wpe_from_histogram(pattern_histogram(codes, weights, cfg), cfg)
