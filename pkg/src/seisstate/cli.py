"""Command-line pipeline: simulate, features, select-k, cluster, label, evaluate, run.

``run`` executes ingest -> mask -> window -> features -> (select-k) -> fit ->
label -> timeline -> correlate in one process; the stage subcommands execute
the same functions against the documented interchange files, so running the
stages one by one produces byte-identical artifacts.

All randomness derives from the single config seed via named sub-seeds, and
``--threads`` only parallelizes order-preserving maps, so outputs do not
depend on thread count.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal error.
Errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, errors
from . import clustering, evaluation, features, labeling, simulate, timeseries
from ._util import derive_seed, fmt_number, write_json


# --- configuration ---------------------------------------------------------------

@dataclass(frozen=True)
class CatalogConfig:
    path: Path
    kind: str = "glitch"
    snr_min: float | None = None


@dataclass(frozen=True)
class PipelineConfig:
    manifest: Path
    flags: Path | None
    window_s: int
    drop_partial: bool
    feature_set: tuple[str, ...]
    standardize: bool
    log_transform: bool
    k: int | None
    k_range: tuple[int, int] | None
    restarts: int
    max_iter: int
    tol: float
    seed: int
    rank_by: str
    rules: Path | None
    catalogs: tuple[CatalogConfig, ...]
    ground_truth: Path | None
    output: Path
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def k_grid(self) -> list[int]:
        if self.k_range is None:
            raise errors.ConfigError("config has fixed k; no grid to search")
        lo, hi = self.k_range
        return list(range(lo, hi + 1))


def load_pipeline_config(path, output_override=None, seed_override=None) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise errors.ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise errors.ConfigError(f"{path}: config must be a JSON object")

    def resolve(p):
        return (path.parent / p).resolve() if p else None

    windowing = raw.get("windowing", {})
    feats = raw.get("features", {})
    clust = raw.get("clustering", {})
    k = clust.get("k")
    k_range = clust.get("k_range")
    if (k is None) == (k_range is None):
        raise errors.ConfigError("exactly one of clustering.k / clustering.k_range is required")
    if k_range is not None:
        if len(k_range) != 2 or int(k_range[0]) > int(k_range[1]):
            raise errors.ConfigError(f"k_range must be [lo, hi] with lo <= hi, got {k_range}")
        k_range = (int(k_range[0]), int(k_range[1]))
    if "manifest" not in raw:
        raise errors.ConfigError("config requires a manifest path")
    catalogs = tuple(
        CatalogConfig(
            path=resolve(c["path"]),
            kind=c.get("kind", "glitch"),
            snr_min=float(c["snr_min"]) if c.get("snr_min") is not None else None,
        )
        for c in raw.get("catalogs", [])
    )
    for c in catalogs:
        if c.kind not in evaluation.KINDS:
            raise errors.ConfigError(f"catalog kind must be one of {evaluation.KINDS}, got {c.kind!r}")
    seed = int(clust.get("seed", 0)) if seed_override is None else int(seed_override)
    output = Path(output_override) if output_override else resolve(raw.get("output", "out"))
    return PipelineConfig(
        manifest=resolve(raw["manifest"]),
        flags=resolve(raw.get("flags")),
        window_s=int(windowing.get("window_s", 60)),
        drop_partial=bool(windowing.get("drop_partial", True)),
        feature_set=tuple(feats.get("set", ["mean", "std"])),
        standardize=bool(feats.get("standardize", True)),
        log_transform=bool(feats.get("log_transform", True)),
        k=int(k) if k is not None else None,
        k_range=k_range,
        restarts=int(clust.get("restarts", 10)),
        max_iter=int(clust.get("max_iter", 300)),
        tol=float(clust.get("tol", 1e-6)),
        seed=seed,
        rank_by=str(clust.get("rank_by", "intrinsic")),
        rules=resolve(raw.get("rules")),
        catalogs=catalogs,
        ground_truth=resolve(raw.get("ground_truth")),
        output=output,
        raw=raw,
    )


def resolved_config_dict(cfg: PipelineConfig) -> dict:
    """Every knob after defaulting; the reproducibility record."""
    return {
        "manifest": str(cfg.manifest),
        "flags": str(cfg.flags) if cfg.flags else None,
        "windowing": {"window_s": cfg.window_s, "drop_partial": cfg.drop_partial},
        "features": {
            "set": list(cfg.feature_set),
            "standardize": cfg.standardize,
            "log_transform": cfg.log_transform,
        },
        "clustering": {
            "k": cfg.k,
            "k_range": list(cfg.k_range) if cfg.k_range else None,
            "restarts": cfg.restarts,
            "max_iter": cfg.max_iter,
            "tol": cfg.tol,
            "seed": cfg.seed,
            "rank_by": cfg.rank_by,
        },
        "rules": str(cfg.rules) if cfg.rules else None,
        "catalogs": [
            {"path": str(c.path), "kind": c.kind, "snr_min": c.snr_min} for c in cfg.catalogs
        ],
        "ground_truth": str(cfg.ground_truth) if cfg.ground_truth else None,
        "output": str(cfg.output),
    }


def write_run_manifest(cfg: PipelineConfig) -> None:
    manifest = {
        "seisstate_version": __version__,
        "config": resolved_config_dict(cfg),
        "derived_seeds": {
            "select_k": derive_seed(cfg.seed, "select_k"),
            "fit": derive_seed(cfg.seed, "fit"),
        },
    }
    write_json(cfg.output / "run_manifest.json", manifest)


# --- pipeline stages (shared by `run` and the stage subcommands) -------------------

def stage_features(cfg: PipelineConfig, threads: int):
    entries = timeseries.load_manifest(cfg.manifest)
    channels = timeseries.load_channels(entries, threads=threads)
    batch = timeseries.align_batch(channels)
    if cfg.flags is not None:
        flags = timeseries.read_flags_csv(cfg.flags)
        batches = timeseries.mask_to_segments(batch, flags)
        if not batches:
            raise errors.NoOverlap("observing flags do not intersect the data span")
    else:
        batches = [batch]
    rows, layout = features.windowed_features(
        batches,
        features.WindowingConfig(cfg.window_s, cfg.drop_partial),
        features.FeatureSpec(cfg.feature_set),
    )
    features.write_features_csv(cfg.output / "features.csv", rows, layout)
    return rows, layout


def _standardizer_for(cfg: PipelineConfig, rows) -> features.Standardizer:
    if cfg.standardize:
        return features.fit_standardizer(rows, log_transform=cfg.log_transform)
    return features.Standardizer.identity(len(rows[0].vector))


def _external_events(cfg: PipelineConfig) -> list[evaluation.Event]:
    ref = cfg.rank_by.split(":", 1)[1]
    for cat in cfg.catalogs:
        if cat.kind == ref:
            return evaluation.load_catalog(cat.path, cat.kind, cat.snr_min)
    ref_path = (cfg.manifest.parent / ref) if not Path(ref).is_absolute() else Path(ref)
    if ref_path.exists():
        return evaluation.load_catalog(ref_path, "glitch", None)
    raise errors.ConfigError(f"rank_by target {ref!r} is neither a configured catalog kind nor a file")


def stage_select_k(cfg: PipelineConfig, rows, layout, threads: int) -> clustering.ValidationReport:
    std = _standardizer_for(cfg, rows)
    X = std.apply(features.feature_matrix(rows))
    scorer = None
    if cfg.rank_by.startswith("external:"):
        events = _external_events(cfg)
        bounds = [(r.window_start, r.window_end) for r in rows]

        def scorer(k: int, assignments: np.ndarray) -> float:
            labels = {int(c): labeling.StateLabel(int(c), frozenset()) for c in set(assignments)}
            timeline = labeling.build_timeline(bounds, assignments, labels)
            return evaluation.max_excess_z(timeline, events)

    elif cfg.rank_by != "intrinsic":
        raise errors.ConfigError(f"rank_by must be 'intrinsic' or 'external:<catalog>', got {cfg.rank_by!r}")
    report = clustering.select_k(
        X,
        cfg.k_grid,
        restarts=cfg.restarts,
        rng_seed=derive_seed(cfg.seed, "select_k"),
        max_iter=cfg.max_iter,
        tol=cfg.tol,
        threads=threads,
        external_scorer=scorer,
    )
    write_json(cfg.output / "validation.json", report.to_json())
    return report


def _chosen_k(cfg: PipelineConfig) -> int:
    if cfg.k is not None:
        return cfg.k
    validation_path = cfg.output / "validation.json"
    if not validation_path.exists():
        raise errors.ConfigError(
            "config uses k_range: run select-k first (validation.json not found in output dir)"
        )
    with open(validation_path, encoding="utf-8") as fh:
        report = clustering.ValidationReport.from_json(json.load(fh))
    return report.ranked[0]


def stage_cluster(cfg: PipelineConfig, rows, layout, k: int, threads: int):
    std = _standardizer_for(cfg, rows)
    X = std.apply(features.feature_matrix(rows))
    fit = clustering.fit_kmeans(
        X,
        k,
        restarts=cfg.restarts,
        max_iter=cfg.max_iter,
        tol=cfg.tol,
        seed=derive_seed(cfg.seed, "fit"),
        threads=threads,
    )
    model = clustering.ClusterModel(
        k=k,
        centroids=fit.centroids,
        inertia=fit.inertia,
        iterations=fit.iterations,
        seed=cfg.seed,
        standardizer=std,
        feature_layout=layout,
        config_echo={
            "restarts": cfg.restarts,
            "max_iter": cfg.max_iter,
            "tol": cfg.tol,
            "window_s": cfg.window_s,
            "standardize": cfg.standardize,
            "log_transform": cfg.log_transform,
        },
    )
    write_json(cfg.output / "model.json", model.to_json())
    _write_assignments(cfg.output / "assignments.csv", rows, fit.assignments)
    _write_summary(cfg, rows, fit.assignments, model)
    return model, fit.assignments


def _write_assignments(path, rows, assignments) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("window_start,window_end,cluster_id\n")
        for r, c in zip(rows, assignments):
            fh.write(f"{fmt_number(r.window_start)},{fmt_number(r.window_end)},{int(c)}\n")


def _read_assignments(path):
    import csv as _csv

    bounds, cids = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _csv.reader(fh)
        header = next(reader, None)
        if header != ["window_start", "window_end", "cluster_id"]:
            raise errors.MalformedRow(f"{path}: unexpected assignments header")
        for row in reader:
            if not row:
                continue
            bounds.append((int(row[0]), int(row[1])))
            cids.append(int(row[2]))
    return bounds, np.array(cids, dtype=np.intp)


def _write_summary(cfg: PipelineConfig, rows, assignments, model) -> None:
    summary = {
        "chosen_k": model.k,
        "n_windows": len(rows),
        "inertia": float(model.inertia),
        "ari_vs_ground_truth": None,
    }
    if cfg.ground_truth is not None:
        truth = simulate.read_ground_truth_csv(cfg.ground_truth)
        summary["ari_vs_ground_truth"] = _ari_against_truth(rows, assignments, truth)
    write_json(cfg.output / "summary.json", summary)


def _ari_against_truth(rows, assignments, truth: simulate.GroundTruth) -> float:
    truth_labels = truth.partition_labels()
    by_start = {w[0]: i for i, w in enumerate(truth.windows)}
    ours, theirs = [], []
    for row, cid in zip(rows, assignments):
        i = by_start.get(row.window_start)
        if i is None:
            continue
        if truth.windows[i] != (row.window_start, row.window_end):
            raise errors.ShapeMismatch(
                f"ground-truth window {truth.windows[i]} does not match analyzed window "
                f"({row.window_start}, {row.window_end})"
            )
        ours.append(int(cid))
        theirs.append(int(truth_labels[i]))
    if not ours:
        raise errors.ShapeMismatch("no analyzed window matches the ground-truth windows")
    return evaluation.adjusted_rand_index(ours, theirs)


def stage_label(cfg: PipelineConfig, model, rows, assignments) -> labeling.StateTimeline:
    if cfg.rules is None:
        raise errors.ConfigError(
            "labeling requires a rules file; operator thresholds are site-specific and not bundled"
        )
    rules = labeling.read_rules_json(cfg.rules)
    raw_centroids = model.raw_centroids()
    labels = {
        cid: labeling.label_cluster(raw_centroids[cid], rules, model.feature_layout, cid)
        for cid in range(model.k)
    }
    bounds = [(r.window_start, r.window_end) for r in rows]
    timeline = labeling.build_timeline(bounds, assignments, labels)
    labeling.write_timeline_csv(cfg.output / "timeline.csv", timeline)
    labeling.write_state_flag_csvs(cfg.output / "states", timeline)

    baseline = labeling.threshold_baseline(rows, rules, model.feature_layout)
    labeling.write_timeline_csv(cfg.output / "baseline_timeline.csv", baseline)
    write_json(
        cfg.output / "agreement.json",
        {"tag_jaccard_vs_baseline": labeling.tag_jaccard(timeline, baseline)},
    )
    return timeline


def stage_evaluate(cfg: PipelineConfig, timeline: labeling.StateTimeline, p_values: bool = False):
    reports = []
    seen_kinds: dict[str, int] = {}
    for cat in cfg.catalogs:
        events = evaluation.load_catalog(cat.path, cat.kind, cat.snr_min)
        report = evaluation.correlate(timeline, events, p_values=p_values)
        seen_kinds[cat.kind] = seen_kinds.get(cat.kind, 0) + 1
        suffix = cat.kind if seen_kinds[cat.kind] == 1 else f"{cat.kind}_{seen_kinds[cat.kind]}"
        write_json(cfg.output / f"rates_{suffix}.json", report.to_json())
        evaluation.write_rates_csv(cfg.output / f"rates_{suffix}.csv", report)
        reports.append(report)
    return reports


def _timeline_for_evaluation(cfg: PipelineConfig) -> labeling.StateTimeline:
    timeline_path = cfg.output / "timeline.csv"
    if timeline_path.exists():
        return labeling.read_timeline_csv(timeline_path)
    bounds, cids = _read_assignments(cfg.output / "assignments.csv")
    labels = {int(c): labeling.StateLabel(int(c), frozenset()) for c in set(cids.tolist())}
    return labeling.build_timeline(bounds, cids, labels)


# --- subcommands --------------------------------------------------------------------

def cmd_simulate(args) -> int:
    spec = simulate.ScenarioSpec.load(args.scenario)
    if args.seed is not None:
        spec = simulate.ScenarioSpec.from_json(
            {**_scenario_echo(spec), "rng_seed": int(args.seed)}
        )
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    batch, truth, events = simulate.generate(spec)

    entries = []
    for series in batch.channels:
        name = f"{series.id.sensor}_{series.id.axis}_{series.id.band.name}.csv"
        timeseries.write_trend_file(out / name, series)
        entries.append(timeseries.ManifestEntry(out / name, series.id, series.dt))
    timeseries.write_manifest(out / "manifest.json", entries)
    timeseries.write_flags_csv(out / "flags.csv", simulate.observing_flags(spec))
    simulate.write_ground_truth_csv(out / "ground_truth.csv", truth)
    if events is not None:
        evaluation.write_catalog_csv(out / f"catalog_{spec.event_model.kind}.csv", events)
    write_json(out / "scenario_echo.json", _scenario_echo(spec))
    return 0


def _scenario_echo(spec: simulate.ScenarioSpec) -> dict:
    return {
        "duration_s": spec.duration_s,
        "start_gps": spec.start_gps,
        "dt_s": spec.dt_s,
        "window_s": spec.window_s,
        "sensors": list(spec.sensors),
        "axes": list(spec.axes),
        "rng_seed": spec.rng_seed,
        "baseline": {"median_nm_s": spec.baseline_median, "sigma_log10": spec.baseline_sigma_log10},
        "injections": [
            {
                "phenomenon": i.phenomenon,
                "start_s": i.start_s,
                "duration_s": i.duration_s,
                "amplitude": i.amplitude,
                "sensors": "*" if i.sensors == "*" else list(i.sensors),
            }
            for i in spec.injections
        ],
        "observing": [list(s) for s in spec.observing] if spec.observing else None,
        "event_model": (
            {
                "background_rate_hz": spec.event_model.background_rate_hz,
                "multipliers": dict(spec.event_model.multipliers),
                "kind": spec.event_model.kind,
            }
            if spec.event_model
            else None
        ),
    }


def _prepared(args) -> tuple[PipelineConfig, int]:
    cfg = load_pipeline_config(args.config, args.output, args.seed)
    cfg.output.mkdir(parents=True, exist_ok=True)
    write_run_manifest(cfg)
    return cfg, args.threads


def cmd_features(args) -> int:
    cfg, threads = _prepared(args)
    stage_features(cfg, threads)
    return 0


def cmd_select_k(args) -> int:
    cfg, threads = _prepared(args)
    if args.rank_by:
        cfg = _override_rank_by(cfg, args.rank_by)
    if cfg.k_range is None:
        raise errors.ConfigError("select-k requires clustering.k_range in the config")
    rows, layout = features.read_features_csv(cfg.output / "features.csv")
    stage_select_k(cfg, rows, layout, threads)
    return 0


def _override_rank_by(cfg: PipelineConfig, rank_by: str) -> PipelineConfig:
    from dataclasses import replace

    return replace(cfg, rank_by=rank_by)


def cmd_cluster(args) -> int:
    cfg, threads = _prepared(args)
    rows, layout = features.read_features_csv(cfg.output / "features.csv")
    stage_cluster(cfg, rows, layout, _chosen_k(cfg), threads)
    return 0


def cmd_label(args) -> int:
    cfg, _ = _prepared(args)
    with open(cfg.output / "model.json", encoding="utf-8") as fh:
        model = clustering.ClusterModel.from_json(json.load(fh))
    rows, _ = features.read_features_csv(cfg.output / "features.csv")
    bounds, cids = _read_assignments(cfg.output / "assignments.csv")
    if [(r.window_start, r.window_end) for r in rows] != bounds:
        raise errors.ShapeMismatch("features.csv and assignments.csv cover different windows")
    stage_label(cfg, model, rows, cids)
    return 0


def cmd_evaluate(args) -> int:
    cfg, _ = _prepared(args)
    timeline = _timeline_for_evaluation(cfg)
    stage_evaluate(cfg, timeline, p_values=args.p_values)
    return 0


def cmd_run(args) -> int:
    cfg, threads = _prepared(args)
    if args.rank_by:
        cfg = _override_rank_by(cfg, args.rank_by)
    rows, layout = stage_features(cfg, threads)
    if cfg.k_range is not None:
        report = stage_select_k(cfg, rows, layout, threads)
        k = report.ranked[0]
    else:
        k = cfg.k
    model, assignments = stage_cluster(cfg, rows, layout, k, threads)
    if cfg.rules is not None:
        timeline = stage_label(cfg, model, rows, assignments)
    else:
        bounds = [(r.window_start, r.window_end) for r in rows]
        labels = {c: labeling.StateLabel(c, frozenset()) for c in range(model.k)}
        timeline = labeling.build_timeline(bounds, assignments, labels)
    stage_evaluate(cfg, timeline, p_values=args.p_values)
    return 0


# --- argument parsing ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seisstate",
        description="Characterize facility environmental states from BLRMS trend channels.",
    )
    parser.add_argument("--version", action="version", version=f"seisstate {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="pipeline config JSON")
    common.add_argument("--output", default=None, help="output directory (overrides config)")
    common.add_argument("--threads", type=int, default=1, help="worker threads (results unchanged)")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("simulate", help="generate a synthetic scenario dataset")
    p.add_argument("--scenario", required=True, help="scenario spec JSON")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("features", parents=[common], help="ingest, mask, window, extract features")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("select-k", parents=[common], help="grid-search the cluster count")
    p.add_argument("--rank-by", default=None, help="'intrinsic' or 'external:<catalog>'")
    p.set_defaults(func=cmd_select_k)

    p = sub.add_parser("cluster", parents=[common], help="fit the k-means state model")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("label", parents=[common], help="label clusters against threshold rules")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("evaluate", parents=[common], help="correlate states with event catalogs")
    p.add_argument("--p-values", action="store_true", help="add exact Poisson tail p-values")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", parents=[common], help="execute the full pipeline")
    p.add_argument("--rank-by", default=None, help="'intrinsic' or 'external:<catalog>'")
    p.add_argument("--p-values", action="store_true", help="add exact Poisson tail p-values")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except errors.ConfigError as exc:
        return _report_error(exc, 2)
    except (errors.SeisStateError, OSError, json.JSONDecodeError) as exc:
        return _report_error(exc, 3)
    except Exception as exc:  # pragma: no cover - internal invariant violations
        return _report_error(exc, 4)


def _report_error(exc: Exception, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
