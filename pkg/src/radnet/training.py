"""Training loop: contiguous temporal folds, z-score normalization fitted on
the training split, AdamW over shuffled window batches, early stopping on
validation loss, best-validation checkpoint restore.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import FeatureSeries
from .errors import NumericError
from .graph import RoadGraph
from .model import RadNet, batch_loss, build_window, rollout_autoregressive, loss as step_loss
from .optim import AdamW
from .tensor import no_grad

log = logging.getLogger("radnet.training")


@dataclass
class TrainConfig:
    lr: float = 5e-4
    weight_decay: float = 1e-5
    max_epochs: int = 60
    patience: int = 10
    folds: int = 5
    batch: int = 32
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    # > 0 trains a single-step model through an autoregressive rollout of
    # this many steps, with ground truth substituted per intermediate step
    # at `teacher_forcing_p`.
    autoregressive_horizon: int = 0
    teacher_forcing_p: float = 0.2

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "folds": self.folds,
            "batch": self.batch,
            "seed": self.seed,
            "betas": list(self.betas),
            "eps": self.eps,
            "autoregressive_horizon": self.autoregressive_horizon,
            "teacher_forcing_p": self.teacher_forcing_p,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        raw = dict(raw)
        if "betas" in raw:
            raw["betas"] = tuple(raw["betas"])
        return cls(**raw)


@dataclass
class Fold:
    """One cross-validation split: a contiguous validation block.

    A sample index t means "window ending at t, target at t + horizon".
    Samples whose window or target indices straddle the split boundary are
    assigned to neither side.
    """

    index: int
    val_range: range
    train_ranges: list[range]
    train_samples: np.ndarray
    val_samples: np.ndarray


def split_folds(n_steps: int, folds: int, window: int, horizon: int) -> list[Fold]:
    """Contiguous temporal folds; every timestep validates in exactly one."""
    if n_steps < folds * (window + horizon):
        raise ValueError(
            f"series of {n_steps} steps too short for {folds} folds of "
            f"window {window} + horizon {horizon}"
        )
    edges = np.linspace(0, n_steps, folds + 1).astype(int)
    out = []
    for k in range(folds):
        val = range(edges[k], edges[k + 1])
        train = [r for r in (range(0, edges[k]), range(edges[k + 1], n_steps)) if len(r)]
        train_set = set()
        for r in train:
            train_set.update(r)
        val_set = set(val)
        train_samples, val_samples = [], []
        for t in range(n_steps - horizon):
            needed = {max(0, i) for i in range(t - window + 1, t + 1)}
            needed.update(range(t + 1, t + horizon + 1))
            if needed <= train_set:
                train_samples.append(t)
            elif needed <= val_set:
                val_samples.append(t)
        out.append(
            Fold(
                index=k,
                val_range=val,
                train_ranges=train,
                train_samples=np.array(train_samples, dtype=int),
                val_samples=np.array(val_samples, dtype=int),
            )
        )
    return out


class Normalizer:
    """Per-feature z-score fitted on the training split only."""

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(std, dtype=np.float64), 1e-8)

    @classmethod
    def fit(cls, data: np.ndarray, timesteps) -> "Normalizer":
        sub = data[np.asarray(timesteps, dtype=int)]
        return cls(sub.mean(axis=(0, 1)), sub.std(axis=(0, 1)))

    def transform(self, data: np.ndarray) -> np.ndarray:
        return (data - self.mean) / self.std

    def inverse(self, data: np.ndarray) -> np.ndarray:
        return data * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, raw: dict) -> "Normalizer":
        return cls(np.array(raw["mean"]), np.array(raw["std"]))


class EarlyStopper:
    """Stop when validation loss fails to improve for `patience` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = -1
        self.stalled = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record an epoch; returns True when training should stop."""
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self.stalled = 0
            return False
        self.stalled += 1
        return self.stalled >= self.patience


@dataclass
class TrainResult:
    history: list[tuple[int, float, float]]  # (epoch, train_loss, val_loss)
    best_epoch: int
    best_val_loss: float
    best_val_mse: float
    stopped_epoch: int
    normalizer: Normalizer
    fold_index: int


def _gather_windows(data: np.ndarray, ts: np.ndarray, window: int) -> np.ndarray:
    return np.stack([build_window(data, int(t), window) for t in ts])


def _validation_losses(
    model: RadNet,
    data: np.ndarray,
    samples: np.ndarray,
    graph: RoadGraph,
    chunk: int = 128,
) -> tuple[float, float]:
    """(mean per-sample norm loss, mean squared error) over `samples`."""
    cfg = model.config
    total_norm = 0.0
    total_sq = 0.0
    n_cells = 0
    with no_grad():
        for lo in range(0, len(samples), chunk):
            ts = samples[lo : lo + chunk]
            windows = _gather_windows(data, ts, cfg.window)
            targets = data[ts + cfg.horizon]
            preds, _ = model.forward_batch(windows, graph)
            diff = preds.values - targets
            total_norm += np.sqrt((diff * diff).sum(axis=(1, 2))).sum()
            total_sq += (diff * diff).sum()
            n_cells += diff.size
    return total_norm / len(samples), total_sq / n_cells


def train(
    model: RadNet,
    series: FeatureSeries,
    graph: RoadGraph,
    cfg: TrainConfig,
    fold: Fold | None = None,
    timesteps: np.ndarray | None = None,
    loss_csv: str | Path | None = None,
) -> TrainResult:
    """Fit `model` in place; returns curves plus the fitted normalizer.

    `timesteps` restricts training to a contiguous index range of the series
    (e.g. the pre-test split); folds are carved from whatever remains. By
    default the last fold's block is the validation set.
    """
    mcfg = model.config
    data_all = series.data
    if timesteps is None:
        timesteps = np.arange(series.n_steps)
    timesteps = np.asarray(timesteps, dtype=int)
    local = data_all[timesteps]
    n_local = len(timesteps)

    # autoregressive training consumes targets out to the rollout horizon
    effective_horizon = max(mcfg.horizon, cfg.autoregressive_horizon)
    folds = split_folds(n_local, cfg.folds, mcfg.window, effective_horizon)
    if fold is None:
        fold = folds[-1]
    normalizer = Normalizer.fit(local, [t for r in fold.train_ranges for t in r])
    data = normalizer.transform(local)

    rng = np.random.default_rng(cfg.seed)
    params = model.named_parameters()
    opt = AdamW(params, cfg.lr, cfg.betas, cfg.eps, cfg.weight_decay)
    stopper = EarlyStopper(cfg.patience)

    best_snapshot = model.state_snapshot()
    best_mse = np.inf
    history: list[tuple[int, float, float]] = []
    train_samples = fold.train_samples.copy()
    if len(train_samples) == 0 or len(fold.val_samples) == 0:
        raise ValueError("fold has no usable training or validation samples")

    ar_steps = cfg.autoregressive_horizon
    stopped = -1
    for epoch in range(cfg.max_epochs):
        rng.shuffle(train_samples)
        epoch_loss = 0.0
        for lo in range(0, len(train_samples), cfg.batch):
            ts = train_samples[lo : lo + cfg.batch]
            windows = _gather_windows(data, ts, mcfg.window)
            if ar_steps > 0:
                value = _autoregressive_batch_loss(
                    model, data, ts, windows, graph, cfg, rng
                )
            else:
                targets = data[ts + mcfg.horizon]
                preds, _ = model.forward_batch(windows, graph, training=True, rng=rng)
                value = batch_loss(preds, targets)
            if np.isnan(value.values):
                raise NumericError(
                    f"NaN training loss (lr={cfg.lr}, epoch={epoch}, "
                    f"step={lo // cfg.batch}, first window index={ts[0]})"
                )
            opt.zero_grad()
            value.backward()
            opt.step()
            epoch_loss += float(value.values) * len(ts)
        epoch_loss /= len(train_samples)

        val_loss, val_mse = _validation_losses(model, data, fold.val_samples, graph)
        history.append((epoch, epoch_loss, val_loss))
        log.debug("epoch %d train %.5f val %.5f", epoch, epoch_loss, val_loss)
        improved = val_loss < stopper.best
        stop = stopper.update(epoch, val_loss)
        if improved:
            best_snapshot = model.state_snapshot()
            best_mse = val_mse
        if stop:
            stopped = epoch
            break
    else:
        stopped = cfg.max_epochs - 1

    model.load_snapshot(best_snapshot)
    if loss_csv is not None:
        write_loss_csv(loss_csv, history)
    return TrainResult(
        history=history,
        best_epoch=stopper.best_epoch,
        best_val_loss=stopper.best,
        best_val_mse=best_mse,
        stopped_epoch=stopped,
        normalizer=normalizer,
        fold_index=fold.index,
    )


def _autoregressive_batch_loss(model, data, ts, windows, graph, cfg, rng):
    """Mean rollout loss over a batch, teacher-forced per intermediate step."""
    mcfg = model.config
    horizon = cfg.autoregressive_horizon
    total = None
    for b, t in enumerate(ts):
        truth = data[int(t) + 1 : int(t) + horizon + 1]
        fc = rollout_autoregressive(
            model,
            windows[b],
            horizon,
            graph,
            truth=truth[:-1] if horizon > 1 else None,
            teacher_force_p=cfg.teacher_forcing_p if horizon > 1 else 0.0,
            rng=rng,
            training=True,
        )
        value = step_loss(fc.prediction, truth[-1])
        total = value if total is None else total + value
    return total * (1.0 / len(ts))


def write_loss_csv(path: str | Path, history: list[tuple[int, float, float]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tr, va in history:
            writer.writerow([epoch, f"{tr:.10g}", f"{va:.10g}"])
