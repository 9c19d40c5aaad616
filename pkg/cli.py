"""
PV Fleet WPE Anomaly Detection - command line
ingest -> profile -> detect -> report, plus tuning sweeps and synthetic fleets.

Exit codes: 0 success, 2 anomalies found, 1 error.
"""

import argparse
import json
import logging
import sys
from typing import Dict, List, Optional, Sequence, Tuple

from analysis.detector import analyze_region, localize_anomalies, summarize_generation
from analysis.errors import ConfigError, ContractViolation, IngestError
from analysis.profiler import (
    hyperparameter_sweep,
    profile_fleet,
    write_profiles_csv,
    write_profiles_json,
    write_sweep_csv,
)
from analysis.report import (
    anomaly_listing,
    build_report,
    region_filename,
    write_correlation_hist_csv,
    write_json,
    write_region_json,
)
from utils.config import RunConfig, build_run_config
from utils.detection_evaluator import DetectionEvaluator
from utils.file_processor import OutputWriter, get_file_info
from utils.ingest import (
    Exclusion,
    GenerationSeries,
    export_long_csv,
    group_by_region,
    load_many,
    parse_region_spec,
    screen_fleet,
)
from utils.performance_tracker import get_performance_tracker
from utils.synth import (
    default_fleet_spec,
    generate_fleet,
    load_fleet_spec,
    read_faults_json,
    regional_fleet_spec,
    write_faults_json,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ANOMALIES = 2

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(level: str, log_file: Optional[str] = None):
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(level=getattr(logging, level.upper()), format=LOG_FORMAT,
                        handlers=handlers, force=True)
    logging.captureWarnings(True)


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="TOML file with RunConfig settings")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--workers", type=int, help="sites profiled in parallel")
    parser.add_argument("--log-file", dest="log_file")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_const", const="DEBUG", dest="log_level")
    verbosity.add_argument("-q", "--quiet", action="store_const", const="WARNING", dest="log_level")


def _add_ingest(parser: argparse.ArgumentParser):
    parser.add_argument("inputs", nargs="*", help="generation CSV files")
    parser.add_argument("--layout", choices=["long", "wide"])
    parser.add_argument("--metadata", help="site_id,postcode file for the wide layout")
    parser.add_argument("--timezone", help="zone of naive timestamps")
    parser.add_argument("--interval-minutes", dest="interval_minutes", type=int)
    parser.add_argument("--max-missing", dest="max_missing", type=int)
    parser.add_argument("--region", dest="regions", action="append",
                        help="postcode range like 5000-5100; repeatable")


def _add_embedding(parser: argparse.ArgumentParser):
    parser.add_argument("--d", type=int, help="embedding dimension")
    parser.add_argument("--tau", type=int, help="time delay in samples")
    parser.add_argument("--width", help="window width: samples, '90d' or '3 months'")
    parser.add_argument("--stride", help="window stride: samples or '1d'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pvwpe", description="WPE-based anomaly detection for PV fleets")
    commands = parser.add_subparsers(dest="command", required=True)

    analyze = commands.add_parser("analyze", help="profile, detect and report")
    _add_common(analyze)
    _add_ingest(analyze)
    _add_embedding(analyze)
    analyze.add_argument("--rule", choices=["fixed", "iqr"])
    analyze.add_argument("--threshold", type=float)
    analyze.add_argument("--method", choices=["pearson", "spearman"])
    analyze.add_argument("--band", type=float, help="localisation band in regional standard deviations")
    analyze.add_argument("--leave-one-out", dest="leave_one_out", action="store_true", default=None)
    analyze.add_argument("--truth", help="faults.json to score the run against")

    profile = commands.add_parser("profile", help="rolling WPE profiles only")
    _add_common(profile)
    _add_ingest(profile)
    _add_embedding(profile)

    tune = commands.add_parser("tune", help="(d, tau) sensitivity sweep")
    _add_common(tune)
    _add_ingest(tune)
    tune.add_argument("--d-values", dest="d_values", type=_int_list)
    tune.add_argument("--tau-values", dest="tau_values", type=_int_list)

    synth = commands.add_parser("synth", help="write a synthetic fleet and its faults")
    _add_common(synth)
    synth.add_argument("--spec", help="fleet spec TOML")
    synth.add_argument("--regional", action="store_true", help="use the 105-site three-region fleet")
    return parser


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _load_and_screen(config: RunConfig) -> Tuple[List[GenerationSeries], List[Exclusion]]:
    series = load_many(config.inputs, config.csv_schema())
    return screen_fleet(series, config.cleaning_policy(), config.curtailment_policy())


def _write_run_metrics(writer: OutputWriter, config: RunConfig):
    payload = {
        "inputs": [get_file_info(path) for path in config.inputs],
        "timings": get_performance_tracker().get_summary(),
    }
    write_json(payload, writer.path("run_metrics.json"))


def cmd_analyze(config: RunConfig) -> int:
    cfg, window = config.embedding(), config.window()
    series, exclusions = _load_and_screen(config)
    groups, unmatched = group_by_region(series, parse_region_spec(config.regions))
    series_by_id = {s.site_id: s for s in series}

    profiles = profile_fleet(series, cfg, window, workers=config.workers)
    profile_by_id = {p.site_id: p for p in profiles}
    for profile in profiles:
        if not len(profile):
            exclusions.append(Exclusion(profile.site_id, "short", "; ".join(profile.diagnostics)))

    analyses, reports, evaluation_localizations = [], [], {}
    with OutputWriter(config.out) as writer:
        write_profiles_csv(profiles, writer.path("profiles.csv"))

        for group in groups:
            region_profiles = [profile_by_id[s] for s in group.site_ids if len(profile_by_id[s])]
            if len(region_profiles) < 2:
                logger.warning(f"⚠️ Region {group.region_id} has fewer than 2 usable sites; skipped")
                continue
            analysis = analyze_region(
                group.region_id, region_profiles, config.detection_rule(), config.correlation_method(),
                leave_one_out=config.leave_one_out, max_undefined_fraction=config.max_undefined_fraction,
            )
            localizations = localize_anomalies(analysis, region_profiles, config.band)
            generation = summarize_generation([series_by_id[p.site_id] for p in region_profiles])
            report = build_report(analysis, localizations, generation)
            write_region_json(report, writer.path(region_filename(report.region_id)))

            analyses.append(analysis)
            reports.append(report)
            if config.truth:
                evaluation_localizations.update(
                    localize_anomalies(analysis, region_profiles, config.band, all_sites=True)
                )

        anomalies = anomaly_listing(reports)
        write_correlation_hist_csv(reports, writer.path("correlation_hist.csv"))
        write_json({"anomalies": anomalies}, writer.path("anomalies.json"))
        write_json({"excluded": [e.to_dict() for e in exclusions], "unmatched": unmatched},
                   writer.path("exclusions.json"))

        if config.truth:
            evaluator = DetectionEvaluator(read_faults_json(config.truth), config.interval * window.width)
            metrics = evaluator.evaluate(analyses, profiles, evaluation_localizations,
                                         excluded=[e.site_id for e in exclusions])
            evaluator.save_results(metrics, writer.path("evaluation.json"))
            writer.path("evaluation.md").write_text(evaluator.generate_report(metrics))
        _write_run_metrics(writer, config)

    if anomalies:
        logger.info(f"🚨 {len(anomalies)} sites flagged: {[a['site_id'] for a in anomalies]}")
        return EXIT_ANOMALIES
    logger.info("✅ No anomalies found")
    return EXIT_OK


def cmd_profile(config: RunConfig) -> int:
    series, exclusions = _load_and_screen(config)
    profiles = profile_fleet(series, config.embedding(), config.window(), workers=config.workers)
    with OutputWriter(config.out) as writer:
        write_profiles_csv(profiles, writer.path("profiles.csv"))
        write_profiles_json(profiles, config.embedding(), config.window(), writer.path("profiles.json"))
        write_json({"excluded": [e.to_dict() for e in exclusions], "unmatched": []},
                   writer.path("exclusions.json"))
        _write_run_metrics(writer, config)
    return EXIT_OK


def cmd_tune(config: RunConfig) -> int:
    series, _ = _load_and_screen(config)
    result = hyperparameter_sweep(series, config.grid())
    with OutputWriter(config.out) as writer:
        write_sweep_csv(result, writer.path("sweep.csv"))
        _write_run_metrics(writer, config)
    return EXIT_OK


def cmd_synth(config: RunConfig, regional: bool = False) -> int:
    if config.spec:
        spec = load_fleet_spec(config.spec)
    else:
        spec = regional_fleet_spec() if regional else default_fleet_spec()
    fleet = generate_fleet(spec)
    with OutputWriter(config.out) as writer:
        export_long_csv(fleet, writer.path("fleet.csv"))
        write_faults_json(spec.faults, writer.path("faults.json"))
    return EXIT_OK


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    flags: Dict = {k: v for k, v in vars(args).items() if k not in ("command", "config", "regional")}
    if flags.get("inputs") == []:
        flags["inputs"] = None
    if flags.get("width") is not None and str(flags["width"]).isdigit():
        flags["width"] = int(flags["width"])
    if flags.get("stride") is not None and str(flags["stride"]).isdigit():
        flags["stride"] = int(flags["stride"])
    return build_run_config(flags, config_path=args.config)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _config_from_args(args)
        configure_logging(config.log_level, config.log_file)
        config.validate(require_inputs=args.command != "synth")
        get_performance_tracker().reset()
        logger.info(f"🚀 pvwpe {args.command} -> {config.out}")

        if args.command == "analyze":
            return cmd_analyze(config)
        if args.command == "profile":
            return cmd_profile(config)
        if args.command == "tune":
            return cmd_tune(config)
        return cmd_synth(config, regional=args.regional)
    except (ConfigError, ContractViolation, IngestError, OSError, json.JSONDecodeError) as e:
        if not logging.getLogger().handlers:
            configure_logging("INFO")
        logger.error(f"❌ {type(e).__name__}: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
