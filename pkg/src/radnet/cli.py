"""Batch command line: synth, stats, train, forecast, detect, evaluate,
ablate, report.

Options resolve as flag > config file > default. A JSON config file passed
with --config may hold any long-option name (dashes or underscores) plus
nested `train` and `pot` blocks. RADNET_LOG sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data as data_io
from .data import IncidentSpec, load_dataset, save_dataset, stats, stats_text, synth_traffic
from .evaluation import evaluate
from .incidents import IncidentLabels
from .model import RadNet, RadNetConfig
from .pipeline import (
    PotConfig,
    run_detection,
    split_train_test,
    write_report_csv,
)
from .training import Normalizer, TrainConfig, train, write_loss_csv

log = logging.getLogger("radnet.cli")

VARIANT_CHOICES = ("full", "no_skip", "no_st", "no_ts")


def _setup_logging() -> None:
    level = os.environ.get("RADNET_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _pick(args: argparse.Namespace, file_cfg: dict, key: str, default):
    """flag > config file > default; file keys may use dashes or underscores."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in file_cfg:
        return file_cfg[key]
    dashed = key.replace("_", "-")
    if dashed in file_cfg:
        return file_cfg[dashed]
    return default


def _train_config(args, file_cfg: dict) -> TrainConfig:
    block = dict(file_cfg.get("train", {}))
    merged = {**block}
    for key, default in (
        ("lr", 5e-4),
        ("weight_decay", 1e-5),
        ("max_epochs", 60),
        ("patience", 10),
        ("folds", 5),
        ("batch", 32),
    ):
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
        merged.setdefault(key, default)
    merged["seed"] = _pick(args, file_cfg, "seed", 0)
    return TrainConfig.from_dict(merged)


def _pot_config(args, file_cfg: dict) -> PotConfig:
    block = dict(file_cfg.get("pot", {}))
    for key, default in (
        ("percentile", 99.0),
        ("risk_q", 1e-3),
        ("delta_per_horizon", 0.5),
        ("horizon_index", 0),
        ("refit_every", 500),
    ):
        flag = getattr(args, key, None)
        if flag is not None:
            block[key] = flag
        block.setdefault(key, default)
    if getattr(args, "static", False):
        block["dynamic"] = False
    block.setdefault("dynamic", True)
    return PotConfig.from_dict(block)


def _checkpoint_stem(path: str | Path) -> Path:
    stem = Path(path)
    if stem.suffix in (".json", ".bin"):
        stem = stem.with_suffix("")
    if stem.is_dir():
        stem = stem / "checkpoint"
    return stem


def _require_checkpoint(stem: Path) -> None:
    missing = [p for p in (stem.with_suffix(".json"), stem.with_suffix(".bin")) if not p.exists()]
    if missing:
        raise FileNotFoundError(
            f"checkpoint not found; expected {missing[0]}"
            + (f" and {missing[1]}" if len(missing) > 1 else "")
        )


def _load_trained(checkpoint: str | Path) -> tuple[RadNet, Normalizer, dict]:
    stem = _checkpoint_stem(checkpoint)
    _require_checkpoint(stem)
    model, manifest = RadNet.load(stem)
    hyper = manifest["hyperparameters"]
    normalizer = Normalizer.from_dict(hyper["normalizer"])
    return model, normalizer, hyper


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, file_cfg) -> int:
    out = Path(_pick(args, file_cfg, "out", "synth-data"))
    seed = _pick(args, file_cfg, "seed", 0)
    events = _pick(args, file_cfg, "events", 20)
    spec = None
    if events > 0:
        spec = IncidentSpec(
            count=events,
            depth=_pick(args, file_cfg, "depth", 0.5),
            duration=_pick(args, file_cfg, "duration", 6),
            min_start=_pick(args, file_cfg, "min_start", 0),
        )
    series, graph, mask = synth_traffic(
        n_nodes=_pick(args, file_cfg, "nodes", 4),
        days=_pick(args, file_cfg, "days", 14),
        delta_seconds=_pick(args, file_cfg, "delta", 300),
        n_features=_pick(args, file_cfg, "features", 1),
        incidents=spec,
        seed=seed,
        noise=_pick(args, file_cfg, "noise", 0.03),
        weekend_factor=_pick(args, file_cfg, "weekend_factor", 1.0),
    )
    save_dataset(out, series, graph)
    with open(out / "incidents.csv", "w", encoding="utf-8") as fh:
        fh.write("timestep,link_id\n")
        for t, j in np.argwhere(mask):
            fh.write(f"{t},{j}\n")
    print(f"wrote {series.n_steps} steps x {series.n_nodes} nodes to {out}")
    return 0


def cmd_stats(args, file_cfg) -> int:
    series, graph, _ = load_dataset(_pick(args, file_cfg, "data", None))
    summary = stats(series, graph)
    print(stats_text(summary))
    out = _pick(args, file_cfg, "out", None)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def _build_model(args, file_cfg, series, seed) -> RadNet:
    cfg = RadNetConfig(
        n_nodes=series.n_nodes,
        n_features=series.n_features,
        window=_pick(args, file_cfg, "window", 5),
        horizon=_pick(args, file_cfg, "horizon", 1),
        variant=_pick(args, file_cfg, "variant", "full"),
        seed=seed,
    )
    return RadNet(cfg)


def cmd_train(args, file_cfg) -> int:
    series, graph, _ = load_dataset(_pick(args, file_cfg, "data", None))
    out = Path(_pick(args, file_cfg, "out", "train-out"))
    seed = _pick(args, file_cfg, "seed", 0)
    test_fraction = _pick(args, file_cfg, "test_fraction", 0.3)
    model = _build_model(args, file_cfg, series, seed)
    tc = _train_config(args, file_cfg)
    train_ts, _ = split_train_test(series.n_steps, test_fraction)
    result = train(model, series, graph, tc, timesteps=train_ts)
    out.mkdir(parents=True, exist_ok=True)
    write_loss_csv(out / "loss_curves.csv", result.history)
    model.save(
        out / "checkpoint",
        extra_hyperparameters={
            "normalizer": result.normalizer.to_dict(),
            "train": tc.to_dict(),
            "test_fraction": test_fraction,
            "best_epoch": result.best_epoch,
            "best_val_loss": result.best_val_loss,
            "best_val_mse": result.best_val_mse,
        },
    )
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "model": model.config.to_dict(),
                "train": tc.to_dict(),
                "test_fraction": test_fraction,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    print(
        f"trained {model.config.variant} to epoch {result.stopped_epoch} "
        f"(best {result.best_epoch}, val loss {result.best_val_loss:.5f}); "
        f"checkpoint at {out / 'checkpoint'}"
    )
    return 0


def _detection_run(args, file_cfg):
    series, graph, _ = load_dataset(_pick(args, file_cfg, "data", None))
    model, normalizer, hyper = _load_trained(_pick(args, file_cfg, "checkpoint", None))
    test_fraction = _pick(args, file_cfg, "test_fraction", hyper.get("test_fraction", 0.3))
    train_ts, test_ts = split_train_test(series.n_steps, test_fraction)
    pot = _pot_config(args, file_cfg)
    run = run_detection(model, series, graph, normalizer, pot, train_ts, test_ts)
    return run, series, graph, model, pot


def cmd_forecast(args, file_cfg) -> int:
    run, series, graph, model, _ = _detection_run(args, file_cfg)
    out = Path(_pick(args, file_cfg, "out", "forecast-out"))
    first = int(run.target_ts[0])
    forecast_series_obj = data_io.FeatureSeries(
        data=run.predictions,
        start_epoch=series.epoch(first),
        delta_seconds=series.delta_seconds,
        feature_names=series.feature_names,
        name=f"{series.name}-forecast-h{model.config.horizon}",
    )
    save_dataset(out, forecast_series_obj, graph)
    with open(out / "targets.json", "w", encoding="utf-8") as fh:
        json.dump({"target_timesteps": [int(t) for t in run.target_ts]}, fh)
        fh.write("\n")
    print(f"wrote {len(run.target_ts)} forecasts to {out}")
    return 0


def cmd_detect(args, file_cfg) -> int:
    run, *_ = _detection_run(args, file_cfg)
    out = Path(_pick(args, file_cfg, "out", "detect-out"))
    run.predicted.to_csv(out / "labels_pred.csv")
    run.truth.to_csv(out / "labels_truth.csv")
    print(
        f"labeled {len(run.target_ts)} steps: "
        f"{int(run.predicted.network_labels.sum())} predicted / "
        f"{int(run.truth.network_labels.sum())} true incidents -> {out}"
    )
    return 0


def cmd_evaluate(args, file_cfg) -> int:
    detect_dir = Path(_pick(args, file_cfg, "detect", None))
    horizon = _pick(args, file_cfg, "horizon", 1)
    predicted = IncidentLabels.from_csv(detect_dir / "labels_pred.csv", horizon)
    truth = IncidentLabels.from_csv(detect_dir / "labels_truth.csv", horizon)
    report = evaluate(predicted, truth)
    out = Path(_pick(args, file_cfg, "out", detect_dir))
    report.to_json(out / "report.json")
    table = report.to_table("radnet")
    with open(out / "report.txt", "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    print(table)
    return 0


def cmd_ablate(args, file_cfg) -> int:
    series, graph, _ = load_dataset(_pick(args, file_cfg, "data", None))
    out = Path(_pick(args, file_cfg, "out", "ablate-out"))
    out.mkdir(parents=True, exist_ok=True)
    seeds = _pick(args, file_cfg, "seeds", "0,1,2")
    seed_list = [int(s) for s in str(seeds).split(",") if s != ""]
    test_fraction = _pick(args, file_cfg, "test_fraction", 0.3)
    train_ts, test_ts = split_train_test(series.n_steps, test_fraction)
    tc_base = _train_config(args, file_cfg)
    pot = _pot_config(args, file_cfg)
    rows = []
    for variant in VARIANT_CHOICES:
        for seed in seed_list:
            cfg = RadNetConfig(
                n_nodes=series.n_nodes,
                n_features=series.n_features,
                window=_pick(args, file_cfg, "window", 5),
                horizon=_pick(args, file_cfg, "horizon", 1),
                variant=variant,
                seed=seed,
            )
            model = RadNet(cfg)
            tc = TrainConfig.from_dict({**tc_base.to_dict(), "seed": seed})
            result = train(model, series, graph, tc, timesteps=train_ts)
            run = run_detection(model, series, graph, result.normalizer, pot, train_ts, test_ts)
            report = evaluate(run.predicted, run.truth)
            rows.append(
                {
                    "variant": variant,
                    "seed": seed,
                    "val_mse": result.best_val_mse,
                    "f1": report.f1,
                    "hitrate_100": report.hitrate[100],
                }
            )
            log.info("ablation %s seed %d: mse %.5f f1 %.3f", variant, seed, result.best_val_mse, report.f1)
    with open(out / "ablation.csv", "w", encoding="utf-8") as fh:
        fh.write("variant,seed,val_mse,f1,hitrate_100\n")
        for row in rows:
            fh.write(
                f"{row['variant']},{row['seed']},{row['val_mse']:.10g},"
                f"{row['f1']:.10g},{row['hitrate_100']:.10g}\n"
            )
    lines = [f"{'variant':10s} {'val_mse':>10s} {'f1':>7s} {'h@100':>7s}"]
    for variant in VARIANT_CHOICES:
        sub = [r for r in rows if r["variant"] == variant]
        lines.append(
            f"{variant:10s} {np.mean([r['val_mse'] for r in sub]):10.5f} "
            f"{np.mean([r['f1'] for r in sub]):7.3f} "
            f"{np.mean([r['hitrate_100'] for r in sub]):7.3f}"
        )
    table = "\n".join(lines)
    with open(out / "ablation.txt", "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    print(table)
    return 0


def cmd_report(args, file_cfg) -> int:
    run, series, *_ = _detection_run(args, file_cfg)
    out = Path(_pick(args, file_cfg, "out", "report-out"))
    write_report_csv(out / "series_report.csv", run, series)
    print(f"wrote per-link series report to {out / 'series_report.csv'}")
    return 0


# ---------------------------------------------------------------------------
# argument plumbing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--variant", choices=VARIANT_CHOICES)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)


def _add_pot_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--percentile", type=float)
    p.add_argument("--risk-q", dest="risk_q", type=float)
    p.add_argument("--delta-per-horizon", dest="delta_per_horizon", type=float)
    p.add_argument("--horizon-index", dest="horizon_index", type=int)
    p.add_argument("--refit-every", dest="refit_every", type=int)
    p.add_argument("--static", action="store_true", help="hold thresholds fixed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radnet",
        description="Spatio-temporal traffic forecasting and incident prediction",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--nodes", type=int)
    p.add_argument("--days", type=int)
    p.add_argument("--delta", type=int)
    p.add_argument("--features", type=int)
    p.add_argument("--events", type=int)
    p.add_argument("--depth", type=float)
    p.add_argument("--duration", type=int)
    p.add_argument("--min-start", dest="min_start", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--weekend-factor", dest="weekend_factor", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="dataset summary")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="fit a forecaster")
    _add_common(p)
    p.add_argument("--data", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="emit forecasts for the test range")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    _add_pot_flags(p)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("detect", help="label incidents over the test range")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    _add_pot_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score predicted labels against truth")
    _add_common(p)
    p.add_argument("--detect", required=True, help="directory from the detect step")
    p.add_argument("--horizon", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and score every model variant")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", help="comma-separated seed list")
    _add_train_flags(p)
    _add_pot_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="per-link plot-ready time series")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    _add_pot_flags(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        file_cfg = _load_config_file(getattr(args, "config", None))
        return args.func(args, file_cfg)
    except Exception as exc:  # noqa: BLE001 - single CLI failure boundary
        print(f"error: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
