"""Transformer encoder-decoder in the BART/mBART style, written functionally
over a flat ``name -> tensor`` parameter map.

Layers are post-norm with GeLU feed-forward blocks; embeddings are followed by
a layer norm, both stacks end with an extra layer norm, and one token embedding
is shared by encoder, decoder and the output projection. Learned positions are
offset by two, as in BART.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Mapping

import numpy as np
import torch
import torch.nn.functional as F

from .tokenizer import PAD_ID

Params = dict[str, torch.Tensor]

POSITION_OFFSET = 2
INIT_STD = 0.02
LN_EPS = 1e-5
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    encoder_layers: int
    decoder_layers: int
    d_model: int
    heads: int
    ffn_dim: int
    vocab_size: int
    max_positions: int = 1024
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by {self.heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be positive")

    @classmethod
    def preset(cls, name: str, vocab_size: int, **overrides) -> "ModelConfig":
        try:
            base = PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
        return replace(cls(vocab_size=vocab_size, **base), **overrides)


PRESETS = {
    "paper-large": dict(
        encoder_layers=12, decoder_layers=12, d_model=1024, heads=16, ffn_dim=4096,
        max_positions=1024, dropout=0.1,
    ),
    "tiny": dict(
        encoder_layers=2, decoder_layers=2, d_model=64, heads=4, ffn_dim=256,
        max_positions=256, dropout=0.1,
    ),
}


# ---------------------------------------------------------------- shapes

def _attn_shapes(prefix: str, d: int) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for proj in ("q_proj", "k_proj", "v_proj", "out_proj"):
        shapes[f"{prefix}.{proj}.weight"] = (d, d)
        shapes[f"{prefix}.{proj}.bias"] = (d,)
    return shapes


def _norm_shapes(prefix: str, d: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.weight": (d,), f"{prefix}.bias": (d,)}


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f = config.d_model, config.ffn_dim
    shapes: dict[str, tuple[int, ...]] = {"embed_tokens.weight": (config.vocab_size, d)}
    for stack, n_layers in (("encoder", config.encoder_layers), ("decoder", config.decoder_layers)):
        shapes[f"{stack}.embed_positions.weight"] = (config.max_positions + POSITION_OFFSET, d)
        shapes.update(_norm_shapes(f"{stack}.layernorm_embedding", d))
        for i in range(n_layers):
            p = f"{stack}.layers.{i}"
            shapes.update(_attn_shapes(f"{p}.self_attn", d))
            shapes.update(_norm_shapes(f"{p}.self_attn_layer_norm", d))
            if stack == "decoder":
                shapes.update(_attn_shapes(f"{p}.encoder_attn", d))
                shapes.update(_norm_shapes(f"{p}.encoder_attn_layer_norm", d))
            shapes[f"{p}.fc1.weight"] = (f, d)
            shapes[f"{p}.fc1.bias"] = (f,)
            shapes[f"{p}.fc2.weight"] = (d, f)
            shapes[f"{p}.fc2.bias"] = (d,)
            shapes.update(_norm_shapes(f"{p}.final_layer_norm", d))
        shapes.update(_norm_shapes(f"{stack}.layer_norm", d))
    return shapes


def parameter_count(config: ModelConfig) -> int:
    """Closed-form scalar parameter count; the tied embedding is counted once."""
    d, f = config.d_model, config.ffn_dim
    attn = 4 * (d * d + d)
    norm = 2 * d
    ffn = d * f + f + f * d + d
    enc_layer = attn + norm + ffn + norm
    dec_layer = attn + norm + attn + norm + ffn + norm
    per_stack = (config.max_positions + POSITION_OFFSET) * d + norm + norm
    return (
        config.vocab_size * d
        + 2 * per_stack
        + config.encoder_layers * enc_layer
        + config.decoder_layers * dec_layer
    )


def init_params(config: ModelConfig, seed: int = 0, dtype: torch.dtype = torch.float32) -> Params:
    gen = torch.Generator().manual_seed(seed)
    params: Params = {}
    for name, shape in param_shapes(config).items():
        is_norm = "layer_norm" in name or "layernorm" in name
        if is_norm and name.endswith(".weight"):
            t = torch.ones(shape, dtype=dtype)
        elif name.endswith(".bias"):
            t = torch.zeros(shape, dtype=dtype)
        else:
            t = torch.empty(shape, dtype=torch.float64).normal_(0.0, INIT_STD, generator=gen).to(dtype)
        params[name] = t
    return params


# ---------------------------------------------------------------- layers

def gelu(x):
    """Exact GeLU, ``x * Phi(x)``; accepts floats or tensors."""
    if isinstance(x, torch.Tensor):
        return 0.5 * x * (1.0 + torch.erf(x / math.sqrt(2.0)))
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def _layer_norm(x, p: Mapping[str, torch.Tensor], prefix: str):
    return F.layer_norm(x, x.shape[-1:], p[f"{prefix}.weight"], p[f"{prefix}.bias"], LN_EPS)


def _linear(x, p, prefix: str):
    return F.linear(x, p[f"{prefix}.weight"], p[f"{prefix}.bias"])


def _attention(query, key, p, prefix: str, heads: int, mask, dropout: float, training: bool):
    """Multi-head attention; ``mask`` is boolean, True where attention is blocked,
    broadcastable to (batch, heads, q_len, k_len)."""
    b, tq, d = query.shape
    tk = key.shape[1]
    dh = d // heads
    q = _linear(query, p, f"{prefix}.q_proj").view(b, tq, heads, dh).transpose(1, 2)
    k = _linear(key, p, f"{prefix}.k_proj").view(b, tk, heads, dh).transpose(1, 2)
    v = _linear(key, p, f"{prefix}.v_proj").view(b, tk, heads, dh).transpose(1, 2)
    scores = (q * dh**-0.5) @ k.transpose(-1, -2)
    if mask is not None:
        scores = scores.masked_fill(mask, torch.finfo(scores.dtype).min)
    weights = F.dropout(torch.softmax(scores, dim=-1), dropout, training)
    out = (weights @ v).transpose(1, 2).reshape(b, tq, d)
    return _linear(out, p, f"{prefix}.out_proj")


def _feed_forward(x, p, prefix: str, dropout: float, training: bool):
    h = F.dropout(gelu(_linear(x, p, f"{prefix}.fc1")), dropout, training)
    return _linear(h, p, f"{prefix}.fc2")


def _embed(ids, p, stack: str, config: ModelConfig, training: bool):
    length = ids.shape[1]
    if length > config.max_positions:
        raise ValueError(f"sequence length {length} exceeds max_positions {config.max_positions}")
    positions = torch.arange(length) + POSITION_OFFSET
    x = F.embedding(ids, p["embed_tokens.weight"]) + p[f"{stack}.embed_positions.weight"][positions]
    x = _layer_norm(x, p, f"{stack}.layernorm_embedding")
    return F.dropout(x, config.dropout, training)


def encode_source(params: Params, config: ModelConfig, source_ids, training: bool = False):
    """Run the encoder; returns (states, source padding mask)."""
    drop = config.dropout
    pad = source_ids.eq(PAD_ID)
    mask = pad[:, None, None, :]
    x = _embed(source_ids, params, "encoder", config, training)
    for i in range(config.encoder_layers):
        pre = f"encoder.layers.{i}"
        h = _attention(x, x, params, f"{pre}.self_attn", config.heads, mask, drop, training)
        x = _layer_norm(x + F.dropout(h, drop, training), params, f"{pre}.self_attn_layer_norm")
        h = _feed_forward(x, params, pre, drop, training)
        x = _layer_norm(x + F.dropout(h, drop, training), params, f"{pre}.final_layer_norm")
    return _layer_norm(x, params, "encoder.layer_norm"), pad


def decode_states(params: Params, config: ModelConfig, memory, source_pad, target_ids, training: bool = False):
    """Run the decoder over ``target_ids`` and project onto the vocabulary."""
    drop = config.dropout
    t = target_ids.shape[1]
    causal = torch.ones(t, t, dtype=torch.bool).triu(1)
    self_mask = causal[None, None] | target_ids.eq(PAD_ID)[:, None, None, :]
    cross_mask = source_pad[:, None, None, :]
    x = _embed(target_ids, params, "decoder", config, training)
    for i in range(config.decoder_layers):
        pre = f"decoder.layers.{i}"
        h = _attention(x, x, params, f"{pre}.self_attn", config.heads, self_mask, drop, training)
        x = _layer_norm(x + F.dropout(h, drop, training), params, f"{pre}.self_attn_layer_norm")
        h = _attention(x, memory, params, f"{pre}.encoder_attn", config.heads, cross_mask, drop, training)
        x = _layer_norm(x + F.dropout(h, drop, training), params, f"{pre}.encoder_attn_layer_norm")
        h = _feed_forward(x, params, pre, drop, training)
        x = _layer_norm(x + F.dropout(h, drop, training), params, f"{pre}.final_layer_norm")
    x = _layer_norm(x, params, "decoder.layer_norm")
    # an explicit output projection only exists when a test unties the embedding
    out_weight = params.get("output_projection.weight", params["embed_tokens.weight"])
    return x @ out_weight.T


def forward(params: Params, config: ModelConfig, source_ids, target_prefix_ids, training: bool = False):
    """Logits of shape (batch, target_length, vocab_size)."""
    memory, pad = encode_source(params, config, source_ids, training)
    return decode_states(params, config, memory, pad, target_prefix_ids, training)


def loss(logits, target_ids, label_smoothing: float = 0.0):
    """Mean token NLL over non-pad targets (0 when every target is padding).

    With ``label_smoothing`` e the per-token loss is ``(1 - e) * nll + e * mean(-logp)``.
    """
    logp = torch.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, target_ids.unsqueeze(-1)).squeeze(-1)
    if label_smoothing:
        nll = (1 - label_smoothing) * nll - label_smoothing * logp.mean(dim=-1)
    keep = target_ids.ne(PAD_ID)
    return (nll * keep).sum() / keep.sum().clamp(min=1)


def batch_loss(
    params: Params, config: ModelConfig, source_ids, target_ids, training: bool = False, label_smoothing: float = 0.0
):
    """Teacher-forced loss: the decoder reads ``target[:, :-1]`` and predicts ``target[:, 1:]``."""
    logits = forward(params, config, source_ids, target_ids[:, :-1], training)
    return loss(logits, target_ids[:, 1:], label_smoothing)


def gradients(params: Params, config: ModelConfig, batch, training: bool = False, label_smoothing: float = 0.0):
    """Exact gradient of the mean batch loss for every parameter tensor.

    Returns ``(loss_value, grads)`` with ``grads`` keyed like ``params``.
    """
    source_ids, target_ids = batch
    leaves = {k: v.detach().requires_grad_(True) for k, v in params.items()}
    value = batch_loss(leaves, config, source_ids, target_ids, training, label_smoothing)
    grads = torch.autograd.grad(value, list(leaves.values()), allow_unused=True)
    out = {
        k: (g if g is not None else torch.zeros_like(v))
        for (k, v), g in zip(leaves.items(), grads)
    }
    return float(value.detach()), out


def pad_batch(sequences, pad_id: int = PAD_ID) -> torch.Tensor:
    width = max(len(s) for s in sequences)
    out = torch.full((len(sequences), width), pad_id, dtype=torch.long)
    for i, s in enumerate(sequences):
        out[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
    return out


# ---------------------------------------------------------------- checkpoints

_LEN = struct.Struct("<Q")


def save_checkpoint(path: str | Path, params: Params, config: ModelConfig, meta: dict | None = None) -> None:
    """Write ``u64 header length | JSON header | little-endian float32 tensors``."""
    index, offset, blobs = [], 0, []
    for name, t in params.items():
        arr = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(config),
        "tensors": index,
        "meta": meta or {},
    }
    raw = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_LEN.pack(len(raw)))
        f.write(raw)
        for blob in blobs:
            f.write(blob)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[Params, ModelConfig, dict]:
    data = Path(path).read_bytes()
    (n,) = _LEN.unpack_from(data)
    header = json.loads(data[_LEN.size : _LEN.size + n].decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    config = ModelConfig(**header["config"])
    body = memoryview(data)[_LEN.size + n :]
    params: Params = {}
    for entry in header["tensors"]:
        count = math.prod(entry["shape"])
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=entry["offset"])
        params[entry["name"]] = torch.from_numpy(arr.reshape(entry["shape"]).astype(np.float32))
    return params, config, header["meta"]
