"""End-to-end incident prediction: forecast, residuals, thresholds, labels.

Ground truth is generated from the true series with the same threshold
stream later applied to the predictions, so the two label sets are directly
comparable. The threshold stream is driven by the true residuals (ground
truth must not depend on model quality); dynamic mode updates the tail
counters as those scores arrive.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import FeatureSeries
from .graph import RoadGraph
from .incidents import (
    BaselineTable,
    IncidentLabels,
    ThresholdState,
    build_baseline,
    label,
    label_with_thresholds,
    percentile_for_horizon,
    pot_fit,
    residual_scores,
)
from .model import RadNet, build_window
from .tensor import no_grad
from .training import Normalizer


@dataclass
class PotConfig:
    percentile: float = 99.0
    risk_q: float = 1e-3
    delta_per_horizon: float = 0.5
    horizon_index: int = 0  # position on the horizon ladder (0 = shortest)
    dynamic: bool = True
    refit_every: int = 500

    @property
    def effective_percentile(self) -> float:
        return percentile_for_horizon(self.percentile, self.horizon_index, self.delta_per_horizon)

    def to_dict(self) -> dict:
        return {
            "percentile": self.percentile,
            "risk_q": self.risk_q,
            "delta_per_horizon": self.delta_per_horizon,
            "horizon_index": self.horizon_index,
            "dynamic": self.dynamic,
            "refit_every": self.refit_every,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "PotConfig":
        return cls(**raw)


def forecast_series(
    model: RadNet,
    series: FeatureSeries,
    graph: RoadGraph,
    normalizer: Normalizer,
    target_ts: np.ndarray,
    chunk: int = 128,
) -> np.ndarray:
    """Model forecasts for each target timestep, in original units.

    Each target u is predicted from the window ending at u - horizon in the
    normalized series; outputs are de-normalized (M, N, D).
    """
    target_ts = np.asarray(target_ts, dtype=int)
    horizon = model.config.horizon
    if (target_ts < horizon).any() or (target_ts >= series.n_steps).any():
        raise IndexError("forecast targets outside the series range")
    data = normalizer.transform(series.data)
    out = np.empty((len(target_ts), series.n_nodes, series.n_features))
    with no_grad():
        for lo in range(0, len(target_ts), chunk):
            ts = target_ts[lo : lo + chunk]
            windows = np.stack(
                [build_window(data, int(u) - horizon, model.config.window) for u in ts]
            )
            preds, _ = model.forward_batch(windows, graph)
            out[lo : lo + len(ts)] = normalizer.inverse(preds.values)
    return out


def fit_threshold_states(
    series: FeatureSeries,
    baseline: BaselineTable,
    calib_ts: np.ndarray,
    pot: PotConfig,
) -> tuple[ThresholdState, list[ThresholdState]]:
    """Calibrate the network state and one per-link state on true residuals."""
    calib_ts = np.asarray(calib_ts, dtype=int)
    base = baseline.for_series(series, calib_ts)
    calib = residual_scores(base, series.data[calib_ts])
    pct = pot.effective_percentile
    net_state = pot_fit(calib.network, pct, pot.risk_q, pot.refit_every)
    link_states = [
        pot_fit(calib.per_link[:, j], pct, pot.risk_q, pot.refit_every)
        for j in range(series.n_nodes)
    ]
    return net_state, link_states


def generate_ground_truth(
    series: FeatureSeries,
    baseline: BaselineTable,
    net_state: ThresholdState,
    link_states: list[ThresholdState],
    target_ts: np.ndarray,
    horizon: int,
    dynamic: bool = True,
) -> IncidentLabels:
    """Label the true series; the emitted thresholds are the shared stream."""
    target_ts = np.asarray(target_ts, dtype=int)
    base = baseline.for_series(series, target_ts)
    scores = residual_scores(base, series.data[target_ts])
    net_labels, net_thresholds = label(scores.network, net_state, dynamic)
    m, n = scores.per_link.shape
    link_labels = np.zeros((m, n), dtype=np.int8)
    link_thresholds = np.zeros((m, n))
    for j in range(n):
        link_labels[:, j], link_thresholds[:, j] = label(
            scores.per_link[:, j], link_states[j], dynamic
        )
    return IncidentLabels(
        horizon=horizon,
        timesteps=target_ts,
        network_scores=scores.network,
        network_thresholds=net_thresholds,
        network_labels=net_labels,
        link_scores=scores.per_link,
        link_thresholds=link_thresholds,
        link_labels=link_labels,
    )


def label_predictions(
    predictions: np.ndarray,
    series: FeatureSeries,
    baseline: BaselineTable,
    truth_labels: IncidentLabels,
) -> IncidentLabels:
    """Label forecasts against the threshold stream carried by the truth bundle."""
    target_ts = truth_labels.timesteps
    base = baseline.for_series(series, target_ts)
    scores = residual_scores(base, predictions)
    return IncidentLabels(
        horizon=truth_labels.horizon,
        timesteps=target_ts,
        network_scores=scores.network,
        network_thresholds=truth_labels.network_thresholds,
        network_labels=label_with_thresholds(
            scores.network, truth_labels.network_thresholds
        ),
        link_scores=scores.per_link,
        link_thresholds=truth_labels.link_thresholds,
        link_labels=label_with_thresholds(
            scores.per_link, truth_labels.link_thresholds
        ),
    )


@dataclass
class DetectionRun:
    predicted: IncidentLabels
    truth: IncidentLabels
    predictions: np.ndarray
    baseline: BaselineTable
    target_ts: np.ndarray


def split_train_test(n_steps: int, test_fraction: float = 0.3) -> tuple[np.ndarray, np.ndarray]:
    """Contiguous head/tail partition of the series indices."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test fraction must be in (0, 1)")
    cut = int(round(n_steps * (1.0 - test_fraction)))
    cut = min(max(cut, 1), n_steps - 1)
    return np.arange(0, cut), np.arange(cut, n_steps)


def run_detection(
    model: RadNet,
    series: FeatureSeries,
    graph: RoadGraph,
    normalizer: Normalizer,
    pot: PotConfig,
    train_ts: np.ndarray,
    test_ts: np.ndarray,
) -> DetectionRun:
    """Forecast the test range and label both streams under shared thresholds."""
    horizon = model.config.horizon
    test_ts = np.asarray(test_ts, dtype=int)
    target_ts = test_ts[test_ts >= horizon]
    baseline = build_baseline(series, train_ts)
    predictions = forecast_series(model, series, graph, normalizer, target_ts)
    net_state, link_states = fit_threshold_states(series, baseline, train_ts, pot)
    truth = generate_ground_truth(
        series, baseline, net_state, link_states, target_ts, horizon, pot.dynamic
    )
    predicted = label_predictions(predictions, series, baseline, truth)
    return DetectionRun(
        predicted=predicted,
        truth=truth,
        predictions=predictions,
        baseline=baseline,
        target_ts=target_ts,
    )


def write_report_csv(
    path: str | Path,
    run: DetectionRun,
    series: FeatureSeries,
    feature: int = 0,
) -> None:
    """Plot-ready per-link rows: baseline, truth, prediction, threshold, label."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = run.baseline.for_series(series, run.target_ts)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["timestep", "link_id", "baseline", "truth", "prediction",
             "score", "threshold", "label"]
        )
        for i, t in enumerate(run.target_ts):
            for j in range(series.n_nodes):
                writer.writerow(
                    [
                        int(t),
                        j,
                        f"{base[i, j, feature]:.10g}",
                        f"{series.data[int(t), j, feature]:.10g}",
                        f"{run.predictions[i, j, feature]:.10g}",
                        f"{run.predicted.link_scores[i, j]:.10g}",
                        f"{run.predicted.link_thresholds[i, j]:.10g}",
                        int(run.predicted.link_labels[i, j]),
                    ]
                )
