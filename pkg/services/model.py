"""
Desk-scale encoder-decoder transformer.

The network produces per-step logits f(x, y_<i) over the target vocabulary.
It is identical for the softmax and SCONES heads; the head only decides which
activation and loss are applied to those logits (see services.losses).

Layers are pre-norm: every sub-layer normalizes its input and adds its output
back to the residual stream, and both stacks end with a final layer norm.
Positions use parameter-free sinusoidal encodings.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing_extensions import Annotated

from config.app import BOS_ID, DESK_MODEL_PRESET, PAD_ID, RESERVED_TOKENS
from services import tensor as T
from services.tensor import Tensor
from utils.errors import DomainError, ShapeError

MASK_VALUE = -1e9


class ModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    num_layers: Annotated[int, Field(ge=1, description="Encoder and decoder depth.")] = DESK_MODEL_PRESET["num_layers"]
    num_heads: Annotated[int, Field(ge=1, description="Attention heads per layer.")] = DESK_MODEL_PRESET["num_heads"]
    d_model: Annotated[int, Field(ge=2, description="Width of the residual stream.")] = DESK_MODEL_PRESET["d_model"]
    d_ff: Annotated[int, Field(ge=1, description="Hidden width of the feed-forward blocks.")] = DESK_MODEL_PRESET["d_ff"]
    source_vocab_size: Annotated[int, Field(ge=len(RESERVED_TOKENS), description="Source vocabulary size.")] = 256
    target_vocab_size: Annotated[int, Field(ge=len(RESERVED_TOKENS), description="Target vocabulary size.")] = 256
    max_positions: Annotated[int, Field(ge=1, description="Longest source or target sequence.")] = DESK_MODEL_PRESET["max_positions"]
    dropout_rate: Annotated[float, Field(ge=0.0, lt=1.0, description="Dropout used during training only.")] = DESK_MODEL_PRESET["dropout_rate"]
    seed: Annotated[int, Field(description="Initialization seed.")] = 0
    tie_embeddings: Annotated[bool, Field(description="Reuse the target embedding as output projection.")] = False
    dtype: Annotated[str, Field(pattern="^float(32|64)$", description="Parameter precision.")] = "float64"

    @model_validator(mode="after")
    def check_heads(self):
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model ({self.d_model}) must be divisible by num_heads ({self.num_heads})")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads


@dataclass
class Checkpoint:
    """Model configuration plus a snapshot of trained parameters."""

    config: ModelConfig
    params: Dict[str, np.ndarray]
    step: int = 0
    optimizer: Optional[Dict[str, np.ndarray]] = None
    loss_spec: Optional[dict] = None
    metadata: Dict[str, str] = field(default_factory=dict)


def _attention_names(prefix: str) -> List[Tuple[str, Tuple[str, ...]]]:
    names = []
    for proj in ("query", "key", "value", "output"):
        names.append((f"{prefix}.{proj}.weight", ("d_model", "d_model")))
        names.append((f"{prefix}.{proj}.bias", ("d_model",)))
    return names


def _norm_names(prefix: str) -> List[Tuple[str, Tuple[str, ...]]]:
    return [(f"{prefix}.gain", ("d_model",)), (f"{prefix}.bias", ("d_model",))]


def _ffn_names(prefix: str) -> List[Tuple[str, Tuple[str, ...]]]:
    return [
        (f"{prefix}.in.weight", ("d_model", "d_ff")),
        (f"{prefix}.in.bias", ("d_ff",)),
        (f"{prefix}.out.weight", ("d_ff", "d_model")),
        (f"{prefix}.out.bias", ("d_model",)),
    ]


def parameter_layout(config: ModelConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """Canonical parameter names with their shapes, in a fixed order."""
    sizes = {
        "d_model": config.d_model,
        "d_ff": config.d_ff,
        "source_vocab": config.source_vocab_size,
        "target_vocab": config.target_vocab_size,
    }
    named = [("source_embed", ("source_vocab", "d_model")), ("target_embed", ("target_vocab", "d_model"))]
    for layer in range(config.num_layers):
        prefix = f"encoder.{layer}"
        named += _norm_names(f"{prefix}.norm_self") + _attention_names(f"{prefix}.self_attn")
        named += _norm_names(f"{prefix}.norm_ffn") + _ffn_names(f"{prefix}.ffn")
    named += _norm_names("encoder.norm_final")
    for layer in range(config.num_layers):
        prefix = f"decoder.{layer}"
        named += _norm_names(f"{prefix}.norm_self") + _attention_names(f"{prefix}.self_attn")
        named += _norm_names(f"{prefix}.norm_cross") + _attention_names(f"{prefix}.cross_attn")
        named += _norm_names(f"{prefix}.norm_ffn") + _ffn_names(f"{prefix}.ffn")
    named += _norm_names("decoder.norm_final")
    if not config.tie_embeddings:
        named.append(("output.weight", ("d_model", "target_vocab")))
    named.append(("output.bias", ("target_vocab",)))
    return [(name, tuple(sizes[dim] for dim in dims)) for name, dims in named]


def init_params(config: ModelConfig) -> Checkpoint:
    """Deterministic initialization: N(0, 1/d_model) matrices, zero biases, unit norm gains."""
    rng = np.random.default_rng(config.seed)
    scale = 1.0 / math.sqrt(config.d_model)
    params = {}
    for name, shape in parameter_layout(config):
        if name.endswith(".gain"):
            values = np.ones(shape)
        elif name.endswith(".bias"):
            values = np.zeros(shape)
        else:
            values = rng.normal(0.0, scale, size=shape)
        params[name] = values.astype(config.dtype)
    return Checkpoint(config=config, params=params)


def parameter_count(ckpt: Checkpoint) -> int:
    return int(sum(values.size for values in ckpt.params.values()))


def bind_params(ckpt: Checkpoint, tape: Optional[T.GradTape] = None) -> Dict[str, Tensor]:
    """Wrap checkpoint arrays as tensors, watched on `tape` when one is given."""
    if tape is None:
        return {name: Tensor._wrap(values) for name, values in ckpt.params.items()}
    return {name: tape.watch(values, name=name) for name, values in ckpt.params.items()}


@lru_cache(maxsize=16)
def _sinusoids(max_positions: int, d_model: int, dtype: str) -> np.ndarray:
    positions = np.arange(max_positions)[:, None]
    rates = np.power(10000.0, -np.arange(0, d_model, 2) / d_model)
    table = np.zeros((max_positions, d_model))
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates[: d_model // 2])
    table = table.astype(dtype)
    table.setflags(write=False)
    return table


def _check_ids(ids: np.ndarray, vocab_size: int, side: str) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise DomainError(f"{side} id out of range [0, {vocab_size})")


def _embed(params, name: str, ids: np.ndarray, config: ModelConfig, offset: int = 0) -> Tensor:
    positions = _sinusoids(config.max_positions, config.d_model, config.dtype)
    scaled = T.mul(T.embedding(params[name], ids), math.sqrt(config.d_model))
    return T.add(scaled, Tensor._wrap(positions[offset : offset + ids.shape[-1]]))


def _linear(x: Tensor, params, prefix: str) -> Tensor:
    return T.add(T.matmul(x, params[f"{prefix}.weight"]), params[f"{prefix}.bias"])


def _norm(x: Tensor, params, prefix: str) -> Tensor:
    return T.layer_norm(x, params[f"{prefix}.gain"], params[f"{prefix}.bias"])


def _split_heads(x: Tensor, config: ModelConfig) -> Tensor:
    batch, length = x.shape[0], x.shape[1]
    return T.transpose(T.reshape(x, (batch, length, config.num_heads, config.head_dim)), (0, 2, 1, 3))


def _merge_heads(x: Tensor, config: ModelConfig) -> Tensor:
    batch, length = x.shape[0], x.shape[2]
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (batch, length, config.d_model))


def _attend(query: Tensor, key: Tensor, value: Tensor, mask_bias: Optional[np.ndarray], config: ModelConfig) -> Tensor:
    """Scaled dot-product attention on split heads: [B,H,Tq,dk] x [B,H,Tk,dk]."""
    scores = T.mul(T.matmul(query, T.transpose(key, (0, 1, 3, 2))), 1.0 / math.sqrt(config.head_dim))
    if mask_bias is not None:
        scores = T.add_mask(scores, mask_bias)
    return T.matmul(T.softmax(scores, axis=-1), value)


def _ffn(x: Tensor, params, prefix: str, config: ModelConfig, rng) -> Tensor:
    hidden = T.dropout(T.relu(_linear(x, params, f"{prefix}.in")), config.dropout_rate, rng)
    return _linear(hidden, params, f"{prefix}.out")


def _source_mask(source: np.ndarray, dtype: str) -> np.ndarray:
    return np.where(source == PAD_ID, MASK_VALUE, 0.0).astype(dtype)[:, None, None, :]


def _causal_mask(length: int, dtype: str) -> np.ndarray:
    return np.triu(np.full((length, length), MASK_VALUE, dtype=dtype), k=1)[None, None, :, :]


def _output_logits(y: Tensor, params, config: ModelConfig) -> Tensor:
    if config.tie_embeddings:
        weight = T.transpose(params["target_embed"], (1, 0))
    else:
        weight = params["output.weight"]
    return T.add(T.matmul(y, weight), params["output.bias"])


def encode(ckpt: Checkpoint, source: np.ndarray, params: Optional[Mapping[str, Tensor]] = None, dropout_rng=None) -> Tensor:
    config = ckpt.config
    params = params or bind_params(ckpt)
    source = np.asarray(source)
    if source.shape[-1] > config.max_positions:
        raise ShapeError(f"source length {source.shape[-1]} exceeds max_positions {config.max_positions}")
    _check_ids(source, config.source_vocab_size, "source")
    rate = config.dropout_rate
    mask = _source_mask(source, config.dtype)

    h = T.dropout(_embed(params, "source_embed", source, config), rate, dropout_rng)
    for layer in range(config.num_layers):
        prefix = f"encoder.{layer}"
        x = _norm(h, params, f"{prefix}.norm_self")
        q = _split_heads(_linear(x, params, f"{prefix}.self_attn.query"), config)
        k = _split_heads(_linear(x, params, f"{prefix}.self_attn.key"), config)
        v = _split_heads(_linear(x, params, f"{prefix}.self_attn.value"), config)
        attended = _linear(_merge_heads(_attend(q, k, v, mask, config), config), params, f"{prefix}.self_attn.output")
        h = T.add(h, T.dropout(attended, rate, dropout_rng))
        x = _norm(h, params, f"{prefix}.norm_ffn")
        h = T.add(h, T.dropout(_ffn(x, params, f"{prefix}.ffn", config, dropout_rng), rate, dropout_rng))
    return _norm(h, params, "encoder.norm_final")


def forward_teacher_forced(
    ckpt: Checkpoint,
    source_batch: np.ndarray,
    target_in_batch: np.ndarray,
    params: Optional[Mapping[str, Tensor]] = None,
    dropout_rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Logits [B,T,V] for every target position given the gold prefix.

    Dropout is active only when `dropout_rng` is given; without it the forward
    pass is a pure function of parameters and inputs.
    """
    config = ckpt.config
    params = params or bind_params(ckpt)
    source_batch = np.atleast_2d(np.asarray(source_batch))
    target_in_batch = np.atleast_2d(np.asarray(target_in_batch))
    length = target_in_batch.shape[1]
    if length > config.max_positions:
        raise ShapeError(f"target length {length} exceeds max_positions {config.max_positions}")
    _check_ids(target_in_batch, config.target_vocab_size, "target")
    rate = config.dropout_rate

    memory = encode(ckpt, source_batch, params, dropout_rng)
    source_mask = _source_mask(source_batch, config.dtype)
    causal = _causal_mask(length, config.dtype)

    y = T.dropout(_embed(params, "target_embed", target_in_batch, config), rate, dropout_rng)
    for layer in range(config.num_layers):
        prefix = f"decoder.{layer}"
        x = _norm(y, params, f"{prefix}.norm_self")
        q = _split_heads(_linear(x, params, f"{prefix}.self_attn.query"), config)
        k = _split_heads(_linear(x, params, f"{prefix}.self_attn.key"), config)
        v = _split_heads(_linear(x, params, f"{prefix}.self_attn.value"), config)
        attended = _linear(_merge_heads(_attend(q, k, v, causal, config), config), params, f"{prefix}.self_attn.output")
        y = T.add(y, T.dropout(attended, rate, dropout_rng))

        x = _norm(y, params, f"{prefix}.norm_cross")
        q = _split_heads(_linear(x, params, f"{prefix}.cross_attn.query"), config)
        k = _split_heads(_linear(memory, params, f"{prefix}.cross_attn.key"), config)
        v = _split_heads(_linear(memory, params, f"{prefix}.cross_attn.value"), config)
        attended = _linear(_merge_heads(_attend(q, k, v, source_mask, config), config), params, f"{prefix}.cross_attn.output")
        y = T.add(y, T.dropout(attended, rate, dropout_rng))

        x = _norm(y, params, f"{prefix}.norm_ffn")
        y = T.add(y, T.dropout(_ffn(x, params, f"{prefix}.ffn", config, dropout_rng), rate, dropout_rng))

    return _output_logits(_norm(y, params, "decoder.norm_final"), params, config)


@dataclass(frozen=True, eq=False)
class DecoderCache:
    """Incremental decoding state for one source sentence and one target prefix.

    Caches are never mutated: extending a prefix returns a new cache, so a
    parent cache can be shared by every child hypothesis during search.
    """

    source: Tuple[int, ...]
    tokens: Tuple[int, ...]
    source_mask: np.ndarray
    cross_keys: Tuple[np.ndarray, ...]
    cross_values: Tuple[np.ndarray, ...]
    self_keys: Tuple[np.ndarray, ...]
    self_values: Tuple[np.ndarray, ...]
    logits: Optional[np.ndarray] = None  # next-token logits after `tokens`


def _start_cache(ckpt: Checkpoint, source: np.ndarray, params) -> DecoderCache:
    config = ckpt.config
    memory = encode(ckpt, source[None, :], params)
    cross_keys, cross_values = [], []
    for layer in range(config.num_layers):
        prefix = f"decoder.{layer}.cross_attn"
        cross_keys.append(_split_heads(_linear(memory, params, f"{prefix}.key"), config).values)
        cross_values.append(_split_heads(_linear(memory, params, f"{prefix}.value"), config).values)
    empty = np.zeros((1, config.num_heads, 0, config.head_dim), dtype=config.dtype)
    return DecoderCache(
        source=tuple(int(t) for t in source),
        tokens=(),
        source_mask=_source_mask(source[None, :], config.dtype),
        cross_keys=tuple(cross_keys),
        cross_values=tuple(cross_values),
        self_keys=(empty,) * config.num_layers,
        self_values=(empty,) * config.num_layers,
    )


def _advance(ckpt: Checkpoint, cache: DecoderCache, token: int, params) -> DecoderCache:
    config = ckpt.config
    position = len(cache.tokens)
    y = _embed(params, "target_embed", np.array([[token]]), config, offset=position)
    self_keys, self_values = list(cache.self_keys), list(cache.self_values)
    for layer in range(config.num_layers):
        prefix = f"decoder.{layer}"
        x = _norm(y, params, f"{prefix}.norm_self")
        q = _split_heads(_linear(x, params, f"{prefix}.self_attn.query"), config)
        k_new = _split_heads(_linear(x, params, f"{prefix}.self_attn.key"), config).values
        v_new = _split_heads(_linear(x, params, f"{prefix}.self_attn.value"), config).values
        self_keys[layer] = np.concatenate([self_keys[layer], k_new], axis=2)
        self_values[layer] = np.concatenate([self_values[layer], v_new], axis=2)
        attended = _attend(q, Tensor._wrap(self_keys[layer]), Tensor._wrap(self_values[layer]), None, config)
        y = T.add(y, _linear(_merge_heads(attended, config), params, f"{prefix}.self_attn.output"))

        x = _norm(y, params, f"{prefix}.norm_cross")
        q = _split_heads(_linear(x, params, f"{prefix}.cross_attn.query"), config)
        attended = _attend(
            q, Tensor._wrap(cache.cross_keys[layer]), Tensor._wrap(cache.cross_values[layer]), cache.source_mask, config
        )
        y = T.add(y, _linear(_merge_heads(attended, config), params, f"{prefix}.cross_attn.output"))

        x = _norm(y, params, f"{prefix}.norm_ffn")
        y = T.add(y, _ffn(x, params, f"{prefix}.ffn", config, None))

    logits = _output_logits(_norm(y, params, "decoder.norm_final"), params, config)
    return DecoderCache(
        source=cache.source,
        tokens=cache.tokens + (int(token),),
        source_mask=cache.source_mask,
        cross_keys=cache.cross_keys,
        cross_values=cache.cross_values,
        self_keys=tuple(self_keys),
        self_values=tuple(self_values),
        logits=logits.values[0, -1],
    )


def decode_step(
    ckpt: Checkpoint,
    source_ids: Sequence[int],
    prefix_ids: Sequence[int],
    cache: Optional[DecoderCache] = None,
    params: Optional[Mapping[str, Tensor]] = None,
) -> Tuple[np.ndarray, DecoderCache]:
    """Logits for the token following `prefix_ids` (which starts with BOS).

    A cache built for a shorter prefix of the same source is extended by the
    missing positions only; any other cache is ignored and rebuilt.
    """
    config = ckpt.config
    prefix = tuple(int(t) for t in prefix_ids)
    if not prefix or prefix[0] != BOS_ID:
        raise DomainError("decoder prefix must start with BOS")
    if len(prefix) > config.max_positions:
        raise ShapeError(f"prefix length {len(prefix)} exceeds max_positions {config.max_positions}")
    _check_ids(np.asarray(prefix), config.target_vocab_size, "target")
    source = np.asarray(source_ids, dtype=np.int64)
    params = params or bind_params(ckpt)

    usable = (
        cache is not None
        and cache.source == tuple(int(t) for t in source)
        and 0 < len(cache.tokens) <= len(prefix)
        and prefix[: len(cache.tokens)] == cache.tokens
    )
    if not usable:
        cache = _start_cache(ckpt, source, params)

    for token in prefix[len(cache.tokens) :]:
        cache = _advance(ckpt, cache, token, params)
    return cache.logits, cache
