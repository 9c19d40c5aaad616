from .ingest import GenerationSeries, load_csv, screen_fleet
from .performance_tracker import PerformanceTracker, get_performance_tracker

__all__ = ['GenerationSeries', 'load_csv', 'screen_fleet', 'PerformanceTracker', 'get_performance_tracker']
