"""Batch command-line entry point.

Subcommands: synth, measure, interp-eval, run, predict. One JSON config
file drives everything (sections: pipeline, synth, paths, schemas); the
--seed and --workers flags override the config. All randomness flows from
the single seed, so a rerun with the same config reproduces the same data
outputs. Exit codes: 0 success, 1 usage/config error, 2 data error,
3 internal error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig
from .errors import ConfigError, DataError, VitalgridError
from .evaluate import TrainedPipeline, run_pipeline
from .interpolate import SeriesImputer, baseline_fill, interpolation_rmse, zero_fill
from .io import (
    AdmissionFileSchema,
    EventFileSchema,
    read_cohort,
    read_series_matrix,
    write_admissions_csv,
    write_eval_report,
    write_eval_summary,
    write_events_csv,
    write_ground_truth,
    write_histogram,
    write_quality_report,
)
from .quality import correlation_histogram, missing_metrics
from .randomness import DOMAIN_IMPUTER, child_seed
from .records import OBSERVED
from .resample import build_series_set
from .synth import SynthSpec, generate_cohort

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; usage errors are 1 here
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    unknown = set(data) - {"pipeline", "synth", "paths", "schemas"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return data


def _pipeline_config(cfg: dict, args) -> PipelineConfig:
    pc = PipelineConfig.from_dict(cfg.get("pipeline", {}))
    if getattr(args, "seed", None) is not None:
        pc.seed = args.seed
    if getattr(args, "workers", None) is not None:
        pc.workers = args.workers
    return pc.validate()


def _schemas(cfg: dict) -> tuple[EventFileSchema, AdmissionFileSchema]:
    sc = cfg.get("schemas", {})
    return EventFileSchema(**sc.get("events", {})), AdmissionFileSchema(**sc.get("admissions", {}))


def _paths(cfg: dict, args) -> dict:
    paths = dict(cfg.get("paths", {}))
    for key in ("events", "admissions", "truth"):
        val = getattr(args, key.replace("-", "_"), None)
        if val:
            paths[key] = val
    return paths


def _require_paths(paths: dict, *keys: str) -> None:
    missing = [k for k in keys if not paths.get(k)]
    if missing:
        raise ConfigError(f"config paths section must provide: {missing}")


def _prepare_out(out: str, filenames: list[str], force: bool) -> Path:
    out_dir = Path(out)
    existing = [f for f in filenames if (out_dir / f).exists()]
    if existing and not force:
        raise ConfigError(
            f"output file(s) already exist under {out_dir} (use --force to overwrite): {existing}"
        )
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, config_snapshot: dict,
                    inputs: dict, seed, timings: dict) -> None:
    manifest = {
        "command": command,
        "toolkit_version": __version__,
        "config": config_snapshot,
        "input_digests": {k: _digest(v) for k, v in inputs.items() if v and Path(v).exists()},
        "seed": seed,
        "stage_seconds": {k: round(v, 3) for k, v in timings.items()},
    }
    with open(out_dir / "run_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _read_inputs(paths: dict, cfg: dict, require_labels: bool = True):
    _require_paths(paths, "events", "admissions")
    es, ams = _schemas(cfg)
    cohort, stats = read_cohort(paths["events"], paths["admissions"], es, ams,
                                require_labels=require_labels)
    print(
        f"read {stats.admissions_kept} admissions ({stats.admissions_skipped} skipped), "
        f"{stats.events_kept} events ({stats.events_skipped_unparseable} unparseable, "
        f"{stats.events_skipped_orphan} orphaned)",
        file=sys.stderr,
    )
    return cohort


def cmd_synth(args) -> int:
    cfg = _load_config_file(args.config)
    spec = SynthSpec.from_dict(cfg.get("synth", {}))
    if args.seed is not None:
        spec.seed = args.seed
    spec.validate()
    files = ["events.csv", "admissions.csv"]
    if args.truth:
        files += ["truth_series.csv", "truth_signs.csv"]
    out = _prepare_out(args.out, files + ["run_manifest.json"], args.force)

    timings = {}
    t0 = time.perf_counter()
    cohort, truth = generate_cohort(spec)
    timings["generate_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    write_events_csv(cohort.events, out / "events.csv")
    write_admissions_csv(cohort.admissions, out / "admissions.csv")
    if args.truth:
        write_ground_truth(truth, out)
    timings["write_s"] = time.perf_counter() - t0

    _write_manifest(out, "synth", {"synth": spec.to_dict()}, {}, spec.seed, timings)
    labels = cohort.labels()
    print(f"synth cohort: {cohort.n_admissions} admissions, {len(cohort.events)} events, "
          f"prevalence {labels.mean():.3f} -> {out}", file=sys.stderr)
    return EXIT_OK


def cmd_measure(args) -> int:
    cfg = _load_config_file(args.config)
    pc = _pipeline_config(cfg, args)
    paths = _paths(cfg, args)
    out_files = [
        "missing_sign_patient.csv", "missing_sign_record.csv",
        "missing_patient_sign.csv", "missing_patient_record.csv",
        "sign_label_correlation.csv", "correlation_histogram.csv",
        "run_manifest.json",
    ]
    out = _prepare_out(args.out, out_files, args.force)

    timings = {}
    t0 = time.perf_counter()
    cohort = _read_inputs(paths, cfg)
    timings["ingest_s"] = time.perf_counter() - t0

    catalog = cohort.sign_catalog()
    if not catalog:
        raise DataError("cohort has no sign events to measure")
    k = min(pc.top_by_count, len(catalog))
    top_signs = [sid for sid, _ in catalog[:k]]
    top_records = sum(cnt for _, cnt in catalog[:k])
    total_records = sum(cnt for _, cnt in catalog)
    print(f"top-{k} signs cover {100.0 * top_records / total_records:.2f}% of records",
          file=sys.stderr)

    t0 = time.perf_counter()
    series = build_series_set(cohort, top_signs, pc.grid_hours)
    report = missing_metrics(series, cohort)
    timings["measure_s"] = time.perf_counter() - t0

    write_quality_report(report, out)
    write_histogram(correlation_histogram(report, args.bin_width), out / "correlation_histogram.csv")
    _write_manifest(out, "measure", {"pipeline": pc.to_dict()},
                    {"events": paths.get("events"), "admissions": paths.get("admissions")},
                    pc.seed, timings)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config_file(args.config)
    pc = _pipeline_config(cfg, args)
    paths = _paths(cfg, args)
    out_files = [
        "eval_baseline_interpolation.csv", "eval_forest_interpolation.csv",
        "eval_summary.txt", "selected_signs.csv", "run_manifest.json",
        "pipeline/pipeline.json",
    ]
    out = _prepare_out(args.out, out_files, args.force)

    timings = {}
    t0 = time.perf_counter()
    cohort = _read_inputs(paths, cfg)
    timings["ingest_s"] = time.perf_counter() - t0

    result = run_pipeline(pc, cohort)
    timings.update(result.timings)

    write_eval_report(result.report_baseline, out / "eval_baseline_interpolation.csv")
    write_eval_report(result.report_forest, out / "eval_forest_interpolation.csv")
    write_eval_summary([result.report_baseline, result.report_forest], out / "eval_summary.txt")
    with open(out / "selected_signs.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("rank,sign_id\n")
        for i, sid in enumerate(result.pipeline.sign_order):
            fh.write(f"{i},{sid}\n")
    result.pipeline.save(out / "pipeline")
    for finding in result.selection_findings:
        print(f"selection: {finding}", file=sys.stderr)

    _write_manifest(out, "run", {"pipeline": pc.to_dict()},
                    {"events": paths.get("events"), "admissions": paths.get("admissions")},
                    pc.seed, timings)
    rb, rf = result.report_baseline, result.report_forest
    print(f"baseline-interp: auc_roc={rb.auc_roc} auc_pr={rb.auc_pr}", file=sys.stderr)
    print(f"forest-interp:   auc_roc={rf.auc_roc} auc_pr={rf.auc_pr}", file=sys.stderr)
    return EXIT_OK


def cmd_interp_eval(args) -> int:
    cfg = _load_config_file(args.config)
    pc = _pipeline_config(cfg, args)
    paths = _paths(cfg, args)
    _require_paths(paths, "truth")
    out = _prepare_out(args.out, ["interpolation_rmse.csv", "interpolation_fills.csv",
                                  "run_manifest.json"], args.force)

    timings = {}
    t0 = time.perf_counter()
    cohort = _read_inputs(paths, cfg)
    truth = read_series_matrix(paths["truth"])
    timings["ingest_s"] = time.perf_counter() - t0

    series = build_series_set(cohort, list(truth.sign_ids), pc.grid_hours)
    if series.grid_hours != truth.grid_hours:
        raise DataError(
            f"grid_hours={pc.grid_hours} does not match the truth grid ({truth.grid_hours})"
        )
    adm_rows = [truth.admission_ids.index(a) for a in series.admission_ids]

    t0 = time.perf_counter()
    rmse_rows = []
    fill_rows = []
    sampled = _sample_series(series, pc.seed, count=20)
    for k, sid in enumerate(series.sign_ids):
        observed_matrix = series.sign_matrix(sid)
        truth_matrix = truth.sign_matrix(sid)[adm_rows]
        imputer = SeriesImputer(
            window=pc.window, n_trees=pc.interp_trees, max_depth=pc.interp_depth,
            min_leaf=pc.interp_min_leaf, sample_cap=pc.interp_sample_cap,
            variation=pc.variation, seed=child_seed(pc.seed, DOMAIN_IMPUTER, k),
            workers=pc.workers,
        )
        forest_fill, prov = imputer.fit_transform(observed_matrix)
        base_fill, base_prov = baseline_fill(observed_matrix)
        z_fill, z_prov = zero_fill(observed_matrix)
        entries = {
            "forest": interpolation_rmse(forest_fill, prov, truth_matrix),
            "baseline": interpolation_rmse(base_fill, base_prov, truth_matrix),
            "zero": interpolation_rmse(z_fill, z_prov, truth_matrix),
        }
        # nothing masked -> the filled series equals the truth, report 0
        rmse_rows.append((sid, {k: (0.0 if v is None else v) for k, v in entries.items()}))

        for a_row, aid in sampled.get(sid, []):
            masked = np.flatnonzero(prov[a_row] != OBSERVED)
            for t in masked:
                fill_rows.append((
                    aid, sid, int(t), float(truth_matrix[a_row, t]),
                    float(forest_fill[a_row, t]), float(base_fill[a_row, t]),
                ))
    timings["interpolate_s"] = time.perf_counter() - t0

    with open(out / "interpolation_rmse.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("sign_id,rmse_forest,rmse_baseline,rmse_zero\n")
        for sid, e in rmse_rows:
            fh.write(f"{sid},{e['forest']!r},{e['baseline']!r},{e['zero']!r}\n")
    with open(out / "interpolation_fills.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("admission_id,sign_id,t,truth,forest_fill,baseline_fill\n")
        for row in fill_rows:
            fh.write(",".join(str(x) if not isinstance(x, float) else repr(x) for x in row) + "\n")

    _write_manifest(out, "interp-eval", {"pipeline": pc.to_dict()},
                    {"events": paths.get("events"), "admissions": paths.get("admissions"),
                     "truth": paths.get("truth")},
                    pc.seed, timings)
    return EXIT_OK


def _sample_series(series, seed: int, count: int) -> dict:
    """Pick `count` (admission, sign) pairs for the per-slot fill dump."""
    from .randomness import DOMAIN_SUBSAMPLE, substream

    n_signs, n_adm = len(series.sign_ids), len(series.admission_ids)
    total = n_signs * n_adm
    rng = substream(seed, DOMAIN_SUBSAMPLE, 2)
    take = min(count, total)
    picks = np.sort(rng.choice(total, size=take, replace=False))
    out: dict[str, list[tuple[int, str]]] = {}
    for p in picks:
        s, a = divmod(int(p), n_adm)
        out.setdefault(series.sign_ids[s], []).append((a, series.admission_ids[a]))
    return out


def cmd_predict(args) -> int:
    cfg = _load_config_file(args.config)
    paths = _paths(cfg, args)
    out = _prepare_out(args.out, ["scores.csv", "run_manifest.json"], args.force)

    timings = {}
    t0 = time.perf_counter()
    pipeline = TrainedPipeline.load(args.model)
    cohort = _read_inputs(paths, cfg, require_labels=False)
    timings["ingest_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ids, scores = pipeline.predict_scores(cohort)
    timings["predict_s"] = time.perf_counter() - t0

    with open(out / "scores.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("admission_id,score\n")
        for aid, s in zip(ids, scores):
            fh.write(f"{aid},{float(s)!r}\n")
    _write_manifest(out, "predict", {"pipeline": pipeline.config.to_dict()},
                    {"events": paths.get("events"), "admissions": paths.get("admissions")},
                    pipeline.config.seed, timings)
    print(f"scored {len(ids)} admissions -> {out / 'scores.csv'}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vitalgrid", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_inputs=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--workers", type=int, help="parallel workers for tree training")
        if needs_inputs:
            p.add_argument("--events", help="events CSV (overrides config paths.events)")
            p.add_argument("--admissions", help="admissions CSV (overrides config paths.admissions)")

    p = sub.add_parser("synth", help="generate a synthetic cohort with ground truth")
    common(p, needs_inputs=False)
    p.add_argument("--no-truth", dest="truth", action="store_false",
                   help="skip writing the (large) ground-truth CSVs")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("measure", help="write data-quality report CSVs")
    common(p)
    p.add_argument("--bin-width", type=float, default=0.05,
                   help="correlation histogram bin width")
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("run", help="full pipeline: measure, select, interpolate, train, evaluate")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("interp-eval", help="compare interpolators against synthetic ground truth")
    common(p)
    p.add_argument("--truth", help="ground-truth series CSV (overrides config paths.truth)")
    p.set_defaults(func=cmd_interp_eval)

    p = sub.add_parser("predict", help="score admissions with a persisted pipeline")
    common(p)
    p.add_argument("--model", required=True, help="directory written by `run` (…/pipeline)")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except VitalgridError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to exit code 3
        import traceback

        traceback.print_exc()
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
