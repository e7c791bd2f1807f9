"""The dual-permutation forecaster.

Two inference paths encode each input window: graph attention over every
time slice followed by a transformer over time (spatio-temporal), and a
transformer over time followed by graph attention (temporo-spatial). A
learned softmax over a single affine map of the latest feature matrix mixes
the two path outputs with the raw input as a convex combination, and a
feed-forward decoder maps the fused matrix to the forecast.

Ablation variants: `no_skip` replaces the learned combination with a plain
sum, `no_st` drops the spatio-temporal path, `no_ts` drops the
temporo-spatial path (the remaining path is mixed with the input through a
2-way softmax).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .graph import GatLayer, RoadGraph
from .nn import (
    DEFAULT_LEAKY_SLOPE,
    FeedForward,
    Linear,
    assign_parameters,
    load_checkpoint,
    save_checkpoint,
)
from .temporal import TransformerBlock, transformer_forward
from .tensor import DiffArray, concat, frobenius_norm, reshape, softmax, sqrt

VARIANTS = ("full", "no_skip", "no_st", "no_ts")


@dataclass
class RadNetConfig:
    n_nodes: int
    n_features: int
    window: int = 5
    horizon: int = 1
    variant: str = "full"
    gat_heads: int = 1
    transformer_heads: int | None = None  # defaults to n_features
    encoder_hidden: int = 16
    decoder_widths: tuple[int, ...] = (64, 64)
    dropout: float = 0.1
    leaky_slope: float = DEFAULT_LEAKY_SLOPE
    # per_node batches temporal attention over nodes with model width D;
    # flattened attends over (N*D)-wide rows. Single-feature data must use
    # flattened: width-1 layer norm would zero out every slice. Default:
    # per_node when D >= 2, flattened when D == 1.
    temporal_mode: str | None = None
    decoder_source: str = "window"  # or "last"
    seed: int = 0

    def __post_init__(self):
        if self.window < 1 or self.horizon < 1:
            raise ValueError("window and horizon must be at least 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; pick one of {VARIANTS}")
        if self.temporal_mode is None:
            self.temporal_mode = "per_node" if self.n_features > 1 else "flattened"
        if self.temporal_mode not in ("per_node", "flattened"):
            raise ValueError(f"unknown temporal mode {self.temporal_mode!r}")
        if self.temporal_mode == "per_node" and self.n_features < 2:
            raise ValueError(
                "per_node temporal attention needs at least 2 features "
                "(layer norm over a width-1 axis is degenerate); use flattened"
            )
        if self.transformer_heads is None:
            self.transformer_heads = self.n_features
        self.decoder_widths = tuple(self.decoder_widths)

    def to_dict(self) -> dict:
        return {
            "n_nodes": self.n_nodes,
            "n_features": self.n_features,
            "window": self.window,
            "horizon": self.horizon,
            "variant": self.variant,
            "gat_heads": self.gat_heads,
            "transformer_heads": self.transformer_heads,
            "encoder_hidden": self.encoder_hidden,
            "decoder_widths": list(self.decoder_widths),
            "dropout": self.dropout,
            "leaky_slope": self.leaky_slope,
            "temporal_mode": self.temporal_mode,
            "decoder_source": self.decoder_source,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RadNetConfig":
        return cls(**{**raw, "decoder_widths": tuple(raw.get("decoder_widths", (64, 64)))})


@dataclass
class Forecast:
    """One model output: prediction plus the convex path weights used."""

    prediction: DiffArray  # (N, D)
    path_weights: np.ndarray | None  # None for the no_skip variant
    source_t: int | None = None

    @property
    def values(self) -> np.ndarray:
        return self.prediction.values


def build_window(data: np.ndarray, t: int, window: int) -> np.ndarray:
    """The `window` slices ending at timestep t, replicating slice 0 backwards."""
    n_steps = data.shape[0]
    if not 0 <= t < n_steps:
        raise IndexError(f"timestep {t} outside series of length {n_steps}")
    idx = [max(0, i) for i in range(t - window + 1, t + 1)]
    return data[idx]


class RadNet:
    def __init__(self, config: RadNetConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        d = config.n_features
        d_model = config.n_nodes * d if config.temporal_mode == "flattened" else d

        self.gat_st = self.transformer_st = None
        self.transformer_ts = self.gat_ts = None
        if config.variant != "no_st":
            self.gat_st = GatLayer(
                d, d, rng, config.gat_heads, "mean", config.leaky_slope
            )
            self.transformer_st = TransformerBlock(
                d_model,
                config.transformer_heads,
                rng,
                config.encoder_hidden,
                config.dropout,
                config.decoder_source,
            )
        if config.variant != "no_ts":
            self.transformer_ts = TransformerBlock(
                d_model,
                config.transformer_heads,
                rng,
                config.encoder_hidden,
                config.dropout,
                config.decoder_source,
            )
            self.gat_ts = GatLayer(
                d, d, rng, config.gat_heads, "mean", config.leaky_slope
            )

        self.fusion = None
        if config.variant != "no_skip":
            n_mix = 3 if config.variant == "full" else 2
            self.fusion = Linear(config.n_nodes * d, n_mix, rng)

        self.decoder = FeedForward(
            (d, *config.decoder_widths, d), rng, config.leaky_slope
        )

    # -- plumbing --------------------------------------------------------
    def named_parameters(self) -> dict[str, DiffArray]:
        out: dict[str, DiffArray] = {}
        if self.gat_st is not None:
            out.update(self.gat_st.named_parameters("gat_st."))
            out.update(self.transformer_st.named_parameters("transformer_st."))
        if self.transformer_ts is not None:
            out.update(self.transformer_ts.named_parameters("transformer_ts."))
            out.update(self.gat_ts.named_parameters("gat_ts."))
        if self.fusion is not None:
            out.update(self.fusion.named_parameters("fusion."))
        out.update(self.decoder.named_parameters("decoder."))
        return out

    def count_parameters(self) -> int:
        return sum(p.size for p in self.named_parameters().values())

    def parameter_ledger(self) -> list[tuple[str, tuple[int, ...], int]]:
        """Per-parameter (name, shape, size) rows; sizes sum to count_parameters()."""
        return [(n, p.shape, p.size) for n, p in self.named_parameters().items()]

    def state_snapshot(self) -> dict[str, np.ndarray]:
        return {n: p.values.copy() for n, p in self.named_parameters().items()}

    def load_snapshot(self, snapshot: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters().items():
            p.values[...] = snapshot[name]

    def save(self, stem: str | Path, extra_hyperparameters: dict | None = None) -> None:
        hyper = {"config": self.config.to_dict()}
        if extra_hyperparameters:
            hyper.update(extra_hyperparameters)
        save_checkpoint(stem, self.named_parameters(), self.config.seed, hyper)

    @classmethod
    def load(cls, stem: str | Path) -> tuple["RadNet", dict]:
        arrays, manifest = load_checkpoint(stem)
        config = RadNetConfig.from_dict(manifest["hyperparameters"]["config"])
        model = cls(config)
        assign_parameters(model.named_parameters(), arrays)
        return model, manifest

    # -- inference ---------------------------------------------------------
    def _check_graph(self, graph: RoadGraph) -> None:
        if graph.n_nodes != self.config.n_nodes:
            raise DimensionError(
                f"graph has {graph.n_nodes} nodes, model expects {self.config.n_nodes}"
            )

    def forward_batch(
        self,
        windows,
        graph: RoadGraph,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[DiffArray, DiffArray | None]:
        """Run (B, K, N, D) windows; returns ((B, N, D) predictions, (B, k) weights)."""
        windows = windows if isinstance(windows, DiffArray) else DiffArray(windows)
        cfg = self.config
        self._check_graph(graph)
        if windows.ndim != 4 or windows.shape[1:] != (
            cfg.window,
            cfg.n_nodes,
            cfg.n_features,
        ):
            raise DimensionError(
                f"expected (B, {cfg.window}, {cfg.n_nodes}, {cfg.n_features}) "
                f"windows, got {windows.shape}"
            )
        latest = windows[:, -1]  # (B, N, D)

        paths = []
        if self.gat_st is not None:
            spatial = self.gat_st(windows, graph)
            paths.append(
                transformer_forward(
                    self.transformer_st, spatial, cfg.temporal_mode, training, rng
                )
            )
        if self.transformer_ts is not None:
            temporal = transformer_forward(
                self.transformer_ts, windows, cfg.temporal_mode, training, rng
            )
            paths.append(self.gat_ts(temporal, graph))

        if self.fusion is None:  # no_skip: plain sum
            fused = paths[0] + paths[1] + latest
            weights = None
        else:
            flat = reshape(latest, (latest.shape[0], cfg.n_nodes * cfg.n_features))
            weights = softmax(self.fusion(flat), axis=-1)  # (B, k)
            parts = paths + [latest]
            fused = None
            for i, part in enumerate(parts):
                term = reshape(weights[:, i], (-1, 1, 1)) * part
                fused = term if fused is None else fused + term
        return self.decoder(fused), weights

    def forward(
        self,
        window,
        graph: RoadGraph,
        training: bool = False,
        rng: np.random.Generator | None = None,
        source_t: int | None = None,
    ) -> Forecast:
        """Forecast from one (K, N, D) window."""
        window = window if isinstance(window, DiffArray) else DiffArray(window)
        if window.ndim != 3:
            raise DimensionError(f"expected a (K, N, D) window, got {window.shape}")
        batched = reshape(window, (1,) + window.shape)
        pred, weights = self.forward_batch(batched, graph, training, rng)
        return Forecast(
            prediction=pred[0],
            path_weights=None if weights is None else weights.values[0].copy(),
            source_t=source_t,
        )


def loss(prediction, truth) -> DiffArray:
    """Frobenius norm of (truth - prediction); the per-timestep objective."""
    prediction = prediction if isinstance(prediction, DiffArray) else DiffArray(prediction)
    truth = truth if isinstance(truth, DiffArray) else DiffArray(truth)
    if prediction.shape != truth.shape:
        raise DimensionError(f"shape mismatch: {prediction.shape} vs {truth.shape}")
    return frobenius_norm(truth - prediction)


def batch_loss(predictions: DiffArray, truths) -> DiffArray:
    """Mean per-sample Frobenius loss over a (B, N, D) batch."""
    truths = truths if isinstance(truths, DiffArray) else DiffArray(truths)
    if predictions.shape != truths.shape:
        raise DimensionError(f"shape mismatch: {predictions.shape} vs {truths.shape}")
    diff = truths - predictions
    per_sample = sqrt((diff * diff).sum(axis=(-2, -1)))
    return per_sample.mean()


def rollout_autoregressive(
    model: RadNet,
    window,
    horizon: int,
    graph: RoadGraph,
    truth: np.ndarray | None = None,
    teacher_force_p: float = 0.0,
    rng: np.random.Generator | None = None,
    forced_log: list | None = None,
    training: bool = False,
) -> Forecast:
    """Iterate a single-step model `horizon` steps ahead.

    Each intermediate prediction is appended to the window (dropping the
    oldest slice). During training, each appended slice is replaced by the
    ground-truth observation `truth[i]` with probability `teacher_force_p`
    (one Bernoulli draw per intermediate step, recorded in `forced_log`).
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if teacher_force_p > 0.0 and (truth is None or rng is None):
        raise ValueError("teacher forcing needs ground-truth slices and an rng")
    window = window if isinstance(window, DiffArray) else DiffArray(window)
    for step in range(1, horizon + 1):
        forecast = model.forward(window, graph, training=training, rng=rng)
        if step == horizon:
            return forecast
        nxt = forecast.prediction
        if teacher_force_p > 0.0:
            forced = bool(rng.random() < teacher_force_p)
            if forced_log is not None:
                forced_log.append(forced)
            if forced:
                nxt = DiffArray(truth[step - 1])
        window = concat([window[1:], reshape(nxt, (1,) + nxt.shape)], axis=0)
    raise AssertionError("unreachable")
