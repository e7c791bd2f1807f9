"""Temporal inference: sinusoidal position encoding and transformer blocks.

The block encodes a window of timesteps with residual self-attention and a
feed-forward sublayer, then decodes with causally masked self-attention over
a query source followed by cross-attention to the encoder output. The future
feature matrix is unavailable at inference, so the query source defaults to
the (masked) input window itself; the last observation, replicated, is the
alternative.

Attention can run per node (model width = feature count, batched over nodes)
or over flattened node-feature rows; per node is the default.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import DimensionError
from .nn import LayerNorm, FeedForward, xavier_uniform
from .tensor import (
    DiffArray,
    concat,
    dropout,
    matmul,
    reshape,
    softmax,
    swap_last_axes,
    transpose,
)

PositionRNG = np.random.Generator | None


@lru_cache(maxsize=32)
def position_encoding_table(length: int, width: int) -> np.ndarray:
    """(length, width) sinusoid table: sin on even channels, cos on odd."""
    table = np.zeros((length, width))
    pos = np.arange(length)[:, None]
    denom = np.power(10000.0, np.arange(0, width, 2) / width)
    table[:, 0::2] = np.sin(pos / denom)
    table[:, 1::2] = np.cos(pos / denom[: width // 2])
    return table


def position_encode(
    w,
    rate: float = 0.1,
    training: bool = False,
    rng: PositionRNG = None,
) -> DiffArray:
    """Add the fixed sinusoid along the time axis of (..., K, F); dropout in training."""
    w = w if isinstance(w, DiffArray) else DiffArray(w)
    k, width = w.shape[-2], w.shape[-1]
    out = w + position_encoding_table(k, width)
    return dropout(out, rate, rng, training)


def causal_mask(length: int) -> np.ndarray:
    """(K, K) additive mask: 0 on/below the diagonal, -inf strictly above."""
    mask = np.zeros((length, length))
    mask[np.triu_indices(length, k=1)] = -np.inf
    return mask


def _swap_axes(a: DiffArray, i: int, j: int) -> DiffArray:
    perm = list(range(a.ndim))
    perm[i], perm[j] = perm[j], perm[i]
    return transpose(a, tuple(perm))


class MultiHeadAttention:
    """Scaled dot-product attention, heads concatenated then output-projected.

    Scores are scaled by 1/sqrt(model width); an optional additive mask sends
    future positions to -inf before the softmax, so their weights are exactly
    zero after it.
    """

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        if d_model % n_heads != 0:
            raise DimensionError(
                f"model width {d_model} not divisible by {n_heads} heads"
            )
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.scale = 1.0 / np.sqrt(d_model)
        mk = lambda n_out: DiffArray(
            xavier_uniform(rng, d_model, n_out), requires_grad=True
        )
        self.w_query = [mk(self.d_head) for _ in range(n_heads)]
        self.w_key = [mk(self.d_head) for _ in range(n_heads)]
        self.w_value = [mk(self.d_head) for _ in range(n_heads)]
        self.w_out = mk(d_model)

    def _check(self, q: DiffArray, k: DiffArray, v: DiffArray, mask) -> None:
        for name, x in (("query", q), ("key", k), ("value", v)):
            if x.shape[-1] != self.d_model:
                raise DimensionError(
                    f"{name} width {x.shape[-1]} != model width {self.d_model}"
                )
        if mask is not None and mask.shape != (q.shape[-2], k.shape[-2]):
            raise DimensionError(
                f"mask shape {mask.shape} does not fit "
                f"({q.shape[-2]}, {k.shape[-2]}) attention scores"
            )

    def attention_weights(self, q, k, mask=None, head: int = 0) -> DiffArray:
        """(..., Kq, Kk) softmax weights for one head (inspection/tests)."""
        q = q if isinstance(q, DiffArray) else DiffArray(q)
        k = k if isinstance(k, DiffArray) else DiffArray(k)
        self._check(q, k, k, mask)
        qh = matmul(q, self.w_query[head])
        kh = matmul(k, self.w_key[head])
        scores = matmul(qh, swap_last_axes(kh)) * self.scale
        if mask is not None:
            scores = scores + mask
        return softmax(scores, axis=-1)

    def __call__(self, q, k, v, mask=None) -> DiffArray:
        q = q if isinstance(q, DiffArray) else DiffArray(q)
        k = k if isinstance(k, DiffArray) else DiffArray(k)
        v = v if isinstance(v, DiffArray) else DiffArray(v)
        self._check(q, k, v, mask)
        heads = []
        for m in range(self.n_heads):
            qh = matmul(q, self.w_query[m])
            kh = matmul(k, self.w_key[m])
            vh = matmul(v, self.w_value[m])
            scores = matmul(qh, swap_last_axes(kh)) * self.scale
            if mask is not None:
                scores = scores + mask
            weights = softmax(scores, axis=-1)
            heads.append(matmul(weights, vh))
        merged = heads[0] if self.n_heads == 1 else concat(heads, axis=-1)
        return matmul(merged, self.w_out)

    def named_parameters(self, prefix: str = "") -> dict[str, DiffArray]:
        out: dict[str, DiffArray] = {}
        for m in range(self.n_heads):
            out[f"{prefix}head{m}.query"] = self.w_query[m]
            out[f"{prefix}head{m}.key"] = self.w_key[m]
            out[f"{prefix}head{m}.value"] = self.w_value[m]
        out[f"{prefix}out"] = self.w_out
        return out


class EncoderBlock:
    """Residual self-attention + residual feed-forward, layer-normed.

    The feed-forward sublayer reads the block input (not the attention
    output): x1 = LN(x + MHA(x, x, x)); out = LN(x1 + FF(x)).
    """

    def __init__(
        self,
        d_model: int,
        n_heads: int,
        rng: np.random.Generator,
        hidden: int = 16,
        dropout_rate: float = 0.1,
    ):
        self.d_model = d_model
        self.dropout_rate = dropout_rate
        self.attention = MultiHeadAttention(d_model, n_heads, rng)
        self.feed_forward = FeedForward((d_model, hidden, d_model), rng)
        self.norm_attn = LayerNorm(d_model)
        self.norm_ff = LayerNorm(d_model)

    def __call__(self, x, training: bool = False, rng: PositionRNG = None) -> DiffArray:
        x = x if isinstance(x, DiffArray) else DiffArray(x)
        attended = dropout(self.attention(x, x, x), self.dropout_rate, rng, training)
        x1 = self.norm_attn(x + attended)
        ff = dropout(self.feed_forward(x), self.dropout_rate, rng, training)
        return self.norm_ff(x1 + ff)

    def named_parameters(self, prefix: str = "") -> dict[str, DiffArray]:
        out = self.attention.named_parameters(f"{prefix}attention.")
        out.update(self.feed_forward.named_parameters(f"{prefix}ff."))
        out.update(self.norm_attn.named_parameters(f"{prefix}norm_attn."))
        out.update(self.norm_ff.named_parameters(f"{prefix}norm_ff."))
        return out


class TransformerBlock:
    """Encoder plus causally masked decoder, reduced to the final timestep."""

    def __init__(
        self,
        d_model: int,
        n_heads: int,
        rng: np.random.Generator,
        hidden: int = 16,
        dropout_rate: float = 0.1,
        decoder_source: str = "window",
    ):
        if decoder_source not in ("window", "last"):
            raise ValueError(f"unknown decoder source {decoder_source!r}")
        self.d_model = d_model
        self.dropout_rate = dropout_rate
        self.decoder_source = decoder_source
        self.encoder = EncoderBlock(d_model, n_heads, rng, hidden, dropout_rate)
        self.decoder_attention = MultiHeadAttention(d_model, n_heads, rng)
        self.norm_decoder = LayerNorm(d_model)
        self.cross_attention = MultiHeadAttention(d_model, n_heads, rng)
        self.norm_out = LayerNorm(d_model)

    def __call__(self, window, training: bool = False, rng: PositionRNG = None) -> DiffArray:
        """Encode (..., K, d_model) and return the decoded final slice (..., d_model)."""
        window = window if isinstance(window, DiffArray) else DiffArray(window)
        k = window.shape[-2]
        encoded_in = position_encode(window, self.dropout_rate, training, rng)
        memory = self.encoder(encoded_in, training, rng)

        if self.decoder_source == "window":
            source = window
        else:
            last = window[..., -1:, :]
            source = concat([last] * k, axis=-2)
        source = position_encode(source, self.dropout_rate, training, rng)
        masked = dropout(
            self.decoder_attention(source, source, source, causal_mask(k)),
            self.dropout_rate,
            rng,
            training,
        )
        decoded = self.norm_decoder(source + masked)
        crossed = dropout(
            self.cross_attention(decoded, memory, memory),
            self.dropout_rate,
            rng,
            training,
        )
        out = self.norm_out(decoded + crossed)
        return out[..., -1, :]

    def named_parameters(self, prefix: str = "") -> dict[str, DiffArray]:
        out = self.encoder.named_parameters(f"{prefix}encoder.")
        out.update(self.decoder_attention.named_parameters(f"{prefix}decoder_attn."))
        out.update(self.norm_decoder.named_parameters(f"{prefix}norm_decoder."))
        out.update(self.cross_attention.named_parameters(f"{prefix}cross_attn."))
        out.update(self.norm_out.named_parameters(f"{prefix}norm_out."))
        return out


def transformer_forward(
    block: TransformerBlock,
    window,
    mode: str = "per_node",
    training: bool = False,
    rng: PositionRNG = None,
) -> DiffArray:
    """Run a (..., K, N, D) window through the block, returning (..., N, D).

    per_node: each node's (K, D) trace is attended independently (model width
    D, nodes batched). flattened: timesteps are (N*D)-wide rows.
    """
    window = window if isinstance(window, DiffArray) else DiffArray(window)
    if window.ndim < 3:
        raise DimensionError(f"expected (..., K, N, D) window, got {window.shape}")
    n_nodes, width = window.shape[-2], window.shape[-1]
    if mode == "per_node":
        per_node = _swap_axes(window, -3, -2)  # (..., N, K, D)
        return block(per_node, training, rng)
    if mode == "flattened":
        flat = reshape(window, window.shape[:-2] + (n_nodes * width,))
        out = block(flat, training, rng)
        return reshape(out, out.shape[:-1] + (n_nodes, width))
    raise ValueError(f"unknown temporal mode {mode!r}")
