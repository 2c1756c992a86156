"""Small pre-LN encoder-decoder transformer built on the autodiff tensors.

Layout per encoder layer: x += Dropout(SelfAttn(LN(x))), then
x += Dropout(FF(LN(x))). Decoder layers add a cross-attention sublayer
between self-attention and the feed-forward. A final layer norm follows
the last layer of each stack (needed for stable pre-LN training; not part
of the layer-stack parameter count). All linear maps carry biases.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    add,
    dropout_apply,
    embedding,
    layer_norm,
    matmul,
    relu,
    reshape,
    softmax,
    transpose,
)
from .featenc import SourceBatch, embed_source, sinusoid_table, sinusoidal_pe  # noqa: F401

__all__ = [
    "TransformerConfig",
    "init_parameters",
    "parameter_shapes",
    "count_parameters",
    "parameter_breakdown",
    "multi_head_attention",
    "encoder_forward",
    "decoder_forward",
    "key_padding_mask",
    "causal_mask",
    "MaskedSoftmaxError",
]

NEG_INF = float("-inf")


class MaskedSoftmaxError(ValueError):
    """Every key position is masked for some query (degenerate softmax)."""


@dataclass
class TransformerConfig:
    """Architecture hyperparameters.

    Defaults give the small character-level configuration: 4+4 layers,
    4 heads, d_model 256, feed-forward 1024, whose layer-stack holds
    exactly 7,372,800 parameters.
    """

    num_layers: int = 4
    num_heads: int = 4
    d_model: int = 256
    d_ff: int = 1024
    dropout_rate: float = 0.3
    max_positions: int = 1024
    src_vocab_size: int | None = None
    tgt_vocab_size: int | None = None

    def __post_init__(self):
        # num_layers == 0 is tolerated for empty-stack tests
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")
        for name in ("num_heads", "d_model", "d_ff", "max_positions"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.num_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} must be divisible by num_heads {self.num_heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        for name in ("src_vocab_size", "tgt_vocab_size"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive")


def _attn_shapes(prefix: str, d: int) -> dict[str, tuple]:
    shapes = {}
    for proj in ("q", "k", "v", "o"):
        shapes[f"{prefix}.{proj}.weight"] = (d, d)
        shapes[f"{prefix}.{proj}.bias"] = (d,)
    return shapes


def parameter_shapes(config: TransformerConfig) -> dict[str, tuple]:
    """Names and shapes of every learned tensor, in canonical order."""
    if config.src_vocab_size is None or config.tgt_vocab_size is None:
        raise ValueError("vocab sizes must be set before building parameters")
    d, f = config.d_model, config.d_ff
    shapes: dict[str, tuple] = {
        "src_embed.weight": (config.src_vocab_size, d),
        "tgt_embed.weight": (config.tgt_vocab_size, d),
        "type_embed.weight": (2, d),
    }
    for i in range(config.num_layers):
        p = f"encoder.layer{i}"
        shapes[f"{p}.ln1.gain"] = (d,)
        shapes[f"{p}.ln1.bias"] = (d,)
        shapes.update(_attn_shapes(f"{p}.self_attn", d))
        shapes[f"{p}.ln2.gain"] = (d,)
        shapes[f"{p}.ln2.bias"] = (d,)
        shapes[f"{p}.ff.w1.weight"] = (d, f)
        shapes[f"{p}.ff.w1.bias"] = (f,)
        shapes[f"{p}.ff.w2.weight"] = (f, d)
        shapes[f"{p}.ff.w2.bias"] = (d,)
    shapes["encoder.final_ln.gain"] = (d,)
    shapes["encoder.final_ln.bias"] = (d,)
    for i in range(config.num_layers):
        p = f"decoder.layer{i}"
        shapes[f"{p}.ln1.gain"] = (d,)
        shapes[f"{p}.ln1.bias"] = (d,)
        shapes.update(_attn_shapes(f"{p}.self_attn", d))
        shapes[f"{p}.ln2.gain"] = (d,)
        shapes[f"{p}.ln2.bias"] = (d,)
        shapes.update(_attn_shapes(f"{p}.cross_attn", d))
        shapes[f"{p}.ln3.gain"] = (d,)
        shapes[f"{p}.ln3.bias"] = (d,)
        shapes[f"{p}.ff.w1.weight"] = (d, f)
        shapes[f"{p}.ff.w1.bias"] = (f,)
        shapes[f"{p}.ff.w2.weight"] = (f, d)
        shapes[f"{p}.ff.w2.bias"] = (d,)
    shapes["decoder.final_ln.gain"] = (d,)
    shapes["decoder.final_ln.bias"] = (d,)
    shapes["out_proj.weight"] = (d, config.tgt_vocab_size)
    shapes["out_proj.bias"] = (config.tgt_vocab_size,)
    return shapes


def init_parameters(config: TransformerConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Xavier-uniform weights and embeddings, zero biases, unit LN gains."""
    params: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".gain"):
            data = np.ones(shape)
        elif name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            fan_in, fan_out = shape[0], shape[1]
            a = np.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-a, a, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


_SCOPES = ("all", "layer-stack", "embeddings", "output_projection", "final_norms")


def _scope_of(name: str) -> str:
    if ".layer" in name:
        return "layer-stack"
    if name.endswith("_embed.weight"):
        return "embeddings"
    if name.startswith("out_proj."):
        return "output_projection"
    return "final_norms"


def count_parameters(params: Mapping[str, Tensor], scope: str = "all") -> int:
    """Scalar count for one scope. ``layer-stack`` excludes embeddings,
    the output projection and the two final layer norms."""
    if scope not in _SCOPES:
        raise ValueError(f"unknown scope {scope!r}; expected one of {_SCOPES}")
    total = 0
    for name, p in params.items():
        if scope == "all" or _scope_of(name) == scope:
            total += p.data.size
    return total


def parameter_breakdown(params: Mapping[str, Tensor]) -> dict[str, int]:
    out = {s: count_parameters(params, s) for s in _SCOPES}
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map on the last axis; batch dims flattened into one GEMM."""
    shape = x.shape
    d_in = shape[-1]
    flat = reshape(x, (-1, d_in)) if x.ndim != 2 else x
    out = add(matmul(flat, w), b)
    if x.ndim != 2:
        out = reshape(out, shape[:-1] + (w.shape[1],))
    return out


def key_padding_mask(token_mask: np.ndarray) -> np.ndarray:
    """[batch, keys] bool -> broadcastable allowed-matrix [batch, 1, 1, keys]."""
    return token_mask[:, None, None, :]


def causal_mask(n: int) -> np.ndarray:
    """Allowed-matrix [1, 1, n, n]: query t may attend keys <= t."""
    return np.tril(np.ones((n, n), dtype=bool))[None, None, :, :]


def _mask_bias(allowed: np.ndarray, batch: int, n_q: int, n_k: int) -> Tensor:
    full = np.broadcast_to(allowed, (batch, 1, n_q, n_k))
    if not full.any(axis=-1).all():
        raise MaskedSoftmaxError("some query position has every key masked")
    # keep the compact broadcastable shape; the add broadcasts it
    bias = np.where(allowed, 0.0, NEG_INF)
    return Tensor(bias)


def _as_bias(mask, batch: int, n_q: int, n_k: int) -> Tensor:
    # accept a prebuilt additive bias so stacked layers share one check
    if isinstance(mask, Tensor):
        return mask
    return _mask_bias(mask, batch, n_q, n_k)


def _split_heads(x: Tensor, num_heads: int) -> Tensor:
    b, t, d = x.shape
    h = num_heads
    return transpose(reshape(x, (b, t, h, d // h)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, t, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, t, h * dh))


def multi_head_attention(queries: Tensor, keys: Tensor, values: Tensor,
                         allowed: np.ndarray, params: Mapping[str, Tensor],
                         prefix: str, num_heads: int, dropout_rate: float = 0.0,
                         training: bool = False,
                         rng: np.random.Generator | None = None) -> Tensor:
    """Scaled dot-product attention with per-head projections.

    ``allowed`` is a boolean matrix broadcastable to
    [batch, 1, queries, keys]; disallowed positions receive -inf before
    the softmax. Attention probabilities are dropped out in training.
    """
    d = queries.shape[-1]
    if d % num_heads != 0:
        raise ShapeError(f"d_model {d} not divisible by {num_heads} heads")
    b, n_q = queries.shape[0], queries.shape[1]
    n_k = keys.shape[1]
    q = _split_heads(linear(queries, params[f"{prefix}.q.weight"], params[f"{prefix}.q.bias"]), num_heads)
    k = _split_heads(linear(keys, params[f"{prefix}.k.weight"], params[f"{prefix}.k.bias"]), num_heads)
    v = _split_heads(linear(values, params[f"{prefix}.v.weight"], params[f"{prefix}.v.bias"]), num_heads)
    scale = 1.0 / np.sqrt(d / num_heads)
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * scale
    scores = add(scores, _as_bias(allowed, b, n_q, n_k))
    probs = softmax(scores, axis=-1)
    probs = dropout_apply(probs, dropout_rate, training, rng)
    ctx = _merge_heads(matmul(probs, v))
    return linear(ctx, params[f"{prefix}.o.weight"], params[f"{prefix}.o.bias"])


def _feed_forward(x: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    h = relu(linear(x, params[f"{prefix}.w1.weight"], params[f"{prefix}.w1.bias"]))
    return linear(h, params[f"{prefix}.w2.weight"], params[f"{prefix}.w2.bias"])


def _ln(x: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    return layer_norm(x, params[f"{prefix}.gain"], params[f"{prefix}.bias"])


def encoder_forward(src: SourceBatch, params: Mapping[str, Tensor],
                    config: TransformerConfig, training: bool = False,
                    rng: np.random.Generator | None = None,
                    mode: str = "feature_invariant") -> Tensor:
    """Embed a source batch and run the pre-LN encoder stack.

    Returns [batch, src_len, d_model]; padding is masked out of attention
    so real positions are unaffected by batch padding.
    """
    if src.ids.shape[1] > config.max_positions:
        raise ValueError(
            f"source length {src.ids.shape[1]} exceeds max_positions {config.max_positions}"
        )
    x = embed_source(src, params, config, training=training, rng=rng, mode=mode)
    b, s = src.ids.shape
    allowed = _mask_bias(key_padding_mask(src.mask), b, s, s)
    rate = config.dropout_rate
    for i in range(config.num_layers):
        p = f"encoder.layer{i}"
        h = _ln(x, params, f"{p}.ln1")
        attn = multi_head_attention(h, h, h, allowed, params, f"{p}.self_attn",
                                    config.num_heads, rate, training, rng)
        x = add(x, dropout_apply(attn, rate, training, rng))
        ff = _feed_forward(_ln(x, params, f"{p}.ln2"), params, f"{p}.ff")
        x = add(x, dropout_apply(ff, rate, training, rng))
    return _ln(x, params, "encoder.final_ln")


def _embed_targets(tgt_ids: np.ndarray, params: Mapping[str, Tensor],
                   config: TransformerConfig, training: bool,
                   rng: np.random.Generator | None) -> Tensor:
    b, t = tgt_ids.shape
    if t + 1 > config.max_positions:
        raise ValueError(f"target prefix length {t} exceeds max_positions {config.max_positions}")
    d = config.d_model
    emb = embedding(params["tgt_embed.weight"], tgt_ids) * float(np.sqrt(d))
    # target positions count 1..t, like the encoder's character tokens
    pe = sinusoid_table(t + 1, d)[1:t + 1]
    emb = add(emb, Tensor(np.broadcast_to(pe, (b, t, d))))
    return dropout_apply(emb, config.dropout_rate, training, rng)


def decoder_forward(tgt_ids: np.ndarray, encoder_out: Tensor, src_mask: np.ndarray,
                    tgt_mask: np.ndarray | None, params: Mapping[str, Tensor],
                    config: TransformerConfig, training: bool = False,
                    rng: np.random.Generator | None = None,
                    ablate_cross_attention: bool = False) -> Tensor:
    """Causal decoder over a BOS-prefixed target prefix.

    Returns vocabulary logits [batch, tgt_len, tgt_vocab]. Each layer runs
    LN -> causal self-attention -> residual, LN -> cross-attention ->
    residual, LN -> feed-forward -> residual; a final LN precedes the
    output projection. ``ablate_cross_attention`` zeroes the
    cross-attention output (test hook for source-independence checks).
    """
    b, t = tgt_ids.shape
    x = _embed_targets(tgt_ids, params, config, training, rng)
    self_allowed = causal_mask(t)
    if tgt_mask is not None:
        self_allowed = self_allowed & key_padding_mask(tgt_mask)
    s = src_mask.shape[1]
    self_allowed = _mask_bias(self_allowed, b, t, t)
    cross_allowed = _mask_bias(key_padding_mask(src_mask), b, t, s)
    rate = config.dropout_rate
    for i in range(config.num_layers):
        p = f"decoder.layer{i}"
        h = _ln(x, params, f"{p}.ln1")
        attn = multi_head_attention(h, h, h, self_allowed, params, f"{p}.self_attn",
                                    config.num_heads, rate, training, rng)
        x = add(x, dropout_apply(attn, rate, training, rng))
        cross = multi_head_attention(
            _ln(x, params, f"{p}.ln2"), encoder_out, encoder_out, cross_allowed, params,
            f"{p}.cross_attn", config.num_heads, rate, training, rng)
        if ablate_cross_attention:
            cross = cross * 0.0
        x = add(x, dropout_apply(cross, rate, training, rng))
        ff = _feed_forward(_ln(x, params, f"{p}.ln3"), params, f"{p}.ff")
        x = add(x, dropout_apply(ff, rate, training, rng))
    x = _ln(x, params, "decoder.final_ln")
    return linear(x, params["out_proj.weight"], params["out_proj.bias"])
