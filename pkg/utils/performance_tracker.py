"""
Run Performance Tracking
Collects wall-clock timings of the pipeline stages (ingest, profiling,
sweeps, detection) so a run can report where its time went.
"""

import functools
import statistics
import threading
import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Callable, Dict, Iterator, List, Optional


@dataclass
class PerformanceMetric:
    """Represents a single timed operation"""
    timestamp: datetime
    component: str
    operation: str
    duration: float
    success: bool
    metadata: Dict[str, Any] = field(default_factory=dict)


class PerformanceTracker:
    """In-memory collection of timed operations"""

    def __init__(self):
        self.metrics: List[PerformanceMetric] = []
        self._lock = threading.Lock()

    def track_metric(self,
                     component: str,
                     operation: str,
                     duration: float,
                     success: bool = True,
                     metadata: Optional[Dict[str, Any]] = None):
        """Track a performance metric"""
        metric = PerformanceMetric(
            timestamp=datetime.now(),
            component=component,
            operation=operation,
            duration=duration,
            success=success,
            metadata=metadata or {},
        )
        with self._lock:
            self.metrics.append(metric)

    def get_component_performance(self, component: str) -> Dict[str, Any]:
        """Get aggregated timings for one component"""
        with self._lock:
            metrics = [m for m in self.metrics if m.component == component]
        return self._aggregate(metrics)

    def get_summary(self) -> Dict[str, Dict[str, Any]]:
        """Aggregated timings keyed by 'component.operation', sorted by key"""
        grouped = defaultdict(list)
        with self._lock:
            for metric in self.metrics:
                grouped[f"{metric.component}.{metric.operation}"].append(metric)
        return {key: self._aggregate(grouped[key]) for key in sorted(grouped)}

    def reset(self):
        with self._lock:
            self.metrics.clear()

    @staticmethod
    def _aggregate(metrics: List[PerformanceMetric]) -> Dict[str, Any]:
        if not metrics:
            return {
                "count": 0,
                "total_seconds": 0.0,
                "mean_seconds": 0.0,
                "p95_seconds": 0.0,
                "failures": 0,
            }

        durations = sorted(m.duration for m in metrics)
        p95_index = min(int(len(durations) * 0.95), len(durations) - 1)
        return {
            "count": len(durations),
            "total_seconds": sum(durations),
            "mean_seconds": statistics.mean(durations),
            "p95_seconds": durations[p95_index],
            "failures": sum(1 for m in metrics if not m.success),
        }


@contextmanager
def timed(component: str, operation: str) -> Iterator[None]:
    """Record the duration of the enclosed block, failed or not"""
    started = time.perf_counter()
    failure: Optional[str] = None
    try:
        yield
    except Exception as e:
        failure = str(e)
        raise
    finally:
        get_performance_tracker().track_metric(
            component,
            operation,
            time.perf_counter() - started,
            success=failure is None,
            metadata={"error": failure} if failure else None,
        )


def track_performance(component: str, operation: Optional[str] = None):
    """Time every call of the decorated function under component.operation"""
    def decorator(func: Callable) -> Callable:
        name = operation or func.__name__

        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            with timed(component, name):
                return func(*args, **kwargs)

        return wrapper
    return decorator


_tracker = PerformanceTracker()


def get_performance_tracker() -> PerformanceTracker:
    return _tracker


def set_performance_tracker(tracker: PerformanceTracker):
    """Swap the process-wide tracker (tests install a fresh one)"""
    global _tracker
    _tracker = tracker
