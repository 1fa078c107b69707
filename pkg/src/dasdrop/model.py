"""The DAS encoder-decoder network.

The encoder reads question-side embeddings, the decoder reads the start token
followed by response-side embeddings shifted one step right, and every
attention layer (encoder self, decoder self, encoder-decoder) is restricted to
positions at or before the query. The head emits one dropout logit per
position.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import numerics as nx
from .errors import CompatibilityError, ConfigError, ContractError
from .features import COLUMNS, E_FEATURES, L_FEATURES, columns_for
from .numerics import Tensor
from .optim import xavier_init

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    n_blocks: int = 2
    d_model: int = 64
    n_heads: int = 4
    seq_size: int = 5
    dropout: float = 0.1
    d_ff: int | None = None
    cardinalities: dict[str, int] = field(default_factory=dict)
    enc_features: tuple[str, ...] = E_FEATURES
    dec_features: tuple[str, ...] = L_FEATURES
    dtype: str = "float32"

    def __post_init__(self):
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model
        self.enc_features = tuple(self.enc_features)
        self.dec_features = tuple(self.dec_features)
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.n_blocks < 1 or self.seq_size < 2:
            raise ConfigError("n_blocks must be >= 1 and seq_size >= 2")
        bad = [f for f in self.enc_features if f not in E_FEATURES] + [
            f for f in self.dec_features if f not in L_FEATURES
        ]
        if bad:
            raise ConfigError(f"features not valid for their side: {bad}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


Params = dict[str, Tensor]


def init_params(config: ModelConfig, seed: int = 0) -> Params:
    """Xavier-uniform weights and embeddings; zero biases; unit layer-norm gains."""
    if not config.cardinalities:
        raise ConfigError("ModelConfig.cardinalities is empty; build it from a Vocab")
    rng = np.random.default_rng(seed)
    dt = np.dtype(config.dtype)
    d, f = config.d_model, config.d_ff
    shapes: dict[str, tuple] = {}

    for side, feats in (("e", config.enc_features), ("l", config.dec_features)):
        for col in columns_for(feats):
            shapes[f"emb_{side}.{col}"] = ("xavier", config.cardinalities[col] + 1, d)

    def attn(prefix):
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"{prefix}.{w}"] = ("xavier", d, d)

    def ln(prefix):
        shapes[f"{prefix}.gamma"] = ("ones", d)
        shapes[f"{prefix}.beta"] = ("zeros", d)

    def ffn(prefix):
        shapes[f"{prefix}.w1"] = ("xavier", d, f)
        shapes[f"{prefix}.b1"] = ("zeros", f)
        shapes[f"{prefix}.w2"] = ("xavier", f, d)
        shapes[f"{prefix}.b2"] = ("zeros", d)

    for k in range(config.n_blocks):
        attn(f"enc.{k}.self")
        ln(f"enc.{k}.ln1")
        ffn(f"enc.{k}.ffn")
        ln(f"enc.{k}.ln2")
    for k in range(config.n_blocks):
        attn(f"dec.{k}.self")
        ln(f"dec.{k}.ln1")
        attn(f"dec.{k}.cross")
        ln(f"dec.{k}.ln2")
        ffn(f"dec.{k}.ffn")
        ln(f"dec.{k}.ln3")
    shapes["start"] = ("xavier", 1, d)
    shapes["head.w"] = ("xavier", d, 1)
    shapes["head.b"] = ("zeros", 1)

    params: Params = {}
    for name, (kind, *shape) in shapes.items():
        if kind == "xavier":
            arr = xavier_init(shape[0], shape[1], rng, dtype=dt)
        elif kind == "ones":
            arr = np.ones(shape, dtype=dt)
        else:
            arr = np.zeros(shape, dtype=dt)
        params[name] = Tensor(arr, requires_grad=True, name=name)
    return params


# ---------------------------------------------------------------- masks


@dataclass
class MaskSet:
    enc_self: np.ndarray
    dec_self: np.ndarray
    enc_dec: np.ndarray
    pad: np.ndarray


def build_masks(n: int, pad: np.ndarray | None = None) -> MaskSet:
    """Boolean allow-masks (True = may attend), shape ``[..., n, n]``.

    Query ``i`` may attend key ``j`` iff ``j <= i`` and ``j`` is not padding,
    identically for all three attention layers.
    """
    if n < 1:
        raise ContractError(f"window length must be >= 1, got {n}")
    pad = np.zeros(n, dtype=bool) if pad is None else np.asarray(pad, dtype=bool)
    causal = np.tril(np.ones((n, n), dtype=bool))
    allow = causal & ~pad[..., None, :]
    return MaskSet(allow, allow.copy(), allow.copy(), pad)


def _attention_mask(allow: np.ndarray) -> np.ndarray:
    # pad query rows have nothing to attend; let them see themselves so the
    # softmax stays defined (real rows never read pad rows)
    empty = ~allow.any(axis=-1)
    if not empty.any():
        return allow
    n = allow.shape[-1]
    return allow | (empty[..., :, None] & np.eye(n, dtype=bool))


# ---------------------------------------------------------------- forward


def _embed(params: Params, side: str, features, cols: Mapping[str, np.ndarray]) -> Tensor:
    # a "e.<col>" / "l.<col>" entry overrides the shared column for one side only
    out = None
    for col in columns_for(features):
        idx = cols.get(f"{side}.{col}", cols[col])
        e = nx.embedding(params[f"emb_{side}.{col}"], idx)
        out = e if out is None else out + e
    return out


def embed_question(params: Params, config: ModelConfig, cols: Mapping[str, np.ndarray]) -> Tensor:
    """Sum of the enabled question-side feature embeddings."""
    return _embed(params, "e", config.enc_features, cols)


def embed_response(params: Params, config: ModelConfig, cols: Mapping[str, np.ndarray]) -> Tensor:
    """Sum of the enabled response-side feature embeddings."""
    return _embed(params, "l", config.dec_features, cols)


def _mha(params, prefix, xq, xkv, mask, config):
    B, n, d = xq.shape
    h, dk = config.n_heads, config.d_k

    def heads(x, w):
        return nx.transpose(nx.reshape(nx.matmul(x, params[f"{prefix}.{w}"]), (B, n, h, dk)), (0, 2, 1, 3))

    q, k, v = heads(xq, "wq"), heads(xkv, "wk"), heads(xkv, "wv")
    scores = nx.matmul(q, nx.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dk))
    att = nx.masked_softmax(scores, mask[:, None, :, :])
    out = nx.reshape(nx.transpose(nx.matmul(att, v), (0, 2, 1, 3)), (B, n, d))
    return nx.matmul(out, params[f"{prefix}.wo"])


def _ffn(params, prefix, x):
    hdn = nx.relu(nx.linear(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    return nx.linear(hdn, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def _sublayer(params, prefix, x, y, rate, rng):
    return nx.layer_norm(x + nx.dropout(y, rate, rng), params[f"{prefix}.gamma"], params[f"{prefix}.beta"])


def forward_logits(
    params: Params,
    config: ModelConfig,
    cols: Mapping[str, np.ndarray],
    pad: np.ndarray,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Dropout logits ``[batch, n]`` for a batch of windows.

    ``rng`` enables regularisation dropout; pass ``None`` for inference.
    """
    pad = np.asarray(pad, dtype=bool)
    if pad.ndim != 2 or pad.shape[1] != config.seq_size:
        raise ContractError(f"pad flags shape {pad.shape} incompatible with seq_size {config.seq_size}")
    missing = [c for c in columns_for(config.enc_features + config.dec_features) if c not in cols]
    if missing:
        raise ContractError(f"window batch lacks columns {missing}")
    B, n = pad.shape
    rate = config.dropout if rng is not None else 0.0
    masks = build_masks(n, pad)
    m_enc = _attention_mask(masks.enc_self)
    m_dec = _attention_mask(masks.dec_self)
    m_x = _attention_mask(masks.enc_dec)

    x = nx.dropout(embed_question(params, config, cols), rate, rng)
    for k in range(config.n_blocks):
        x = _sublayer(params, f"enc.{k}.ln1", x, _mha(params, f"enc.{k}.self", x, x, m_enc, config), rate, rng)
        x = _sublayer(params, f"enc.{k}.ln2", x, _ffn(params, f"enc.{k}.ffn", x), rate, rng)
    memory = x

    # decoder input: start token at the first real position, then l_{i-1}
    resp = embed_response(params, config, cols)
    zero = Tensor(np.zeros((B, 1, config.d_model), dtype=resp.dtype))
    shifted = nx.concat([zero, resp[:, :-1, :]], axis=1)
    first = ~pad & np.concatenate([np.ones((B, 1), bool), pad[:, :-1]], axis=1)
    y = nx.where(first[:, :, None], nx.reshape(params["start"], (1, 1, config.d_model)), shifted)
    y = nx.dropout(y, rate, rng)
    for k in range(config.n_blocks):
        y = _sublayer(params, f"dec.{k}.ln1", y, _mha(params, f"dec.{k}.self", y, y, m_dec, config), rate, rng)
        y = _sublayer(params, f"dec.{k}.ln2", y, _mha(params, f"dec.{k}.cross", y, memory, m_x, config), rate, rng)
        y = _sublayer(params, f"dec.{k}.ln3", y, _ffn(params, f"dec.{k}.ffn", y), rate, rng)

    logits = nx.matmul(y, params["head.w"]) + params["head.b"]
    return nx.reshape(logits, (B, n))


def das_forward(params: Params, config: ModelConfig, cols: Mapping[str, np.ndarray], pad: np.ndarray) -> np.ndarray:
    """Per-position dropout probabilities in (0, 1), inference mode."""
    return nx.sigmoid(forward_logits(params, config, cols, pad)).data


def predict_last(params: Params, config: ModelConfig, windows, batch_size: int = 512) -> np.ndarray:
    """Probability at the target (last) position of every window."""
    out = np.empty(len(windows), dtype=np.float64)
    for lo in range(0, len(windows), batch_size):
        sl = slice(lo, lo + batch_size)
        cols = {c: v[sl] for c, v in windows.cols.items()}
        logits = forward_logits(params, config, cols, windows.pad[sl]).data[:, -1]
        out[sl] = 1.0 / (1.0 + np.exp(-logits.astype(np.float64)))
    return out


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path: str | Path, config: ModelConfig, params: Params, meta: Mapping[str, str] | None = None) -> None:
    """Write config and named tensors to ``path`` atomically (temp file + rename)."""
    path = Path(path)
    payload = {f"param/{k}": v.data for k, v in params.items()}
    payload["__version__"] = np.array(CHECKPOINT_VERSION)
    payload["__config__"] = np.array(config.to_json())
    payload["__meta__"] = np.array(json.dumps(dict(meta or {}), sort_keys=True))
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, Params, dict[str, str]]:
    with np.load(path, allow_pickle=False) as z:
        version = int(z["__version__"])
        if version != CHECKPOINT_VERSION:
            raise CompatibilityError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
        config = ModelConfig.from_json(str(z["__config__"]))
        meta = json.loads(str(z["__meta__"]))
        params = {
            k[len("param/"):]: Tensor(z[k].copy(), requires_grad=True, name=k[len("param/"):])
            for k in z.files
            if k.startswith("param/")
        }
    expected = init_params_shapes(config)
    if set(expected) != set(params) or any(params[k].shape != s for k, s in expected.items()):
        raise CompatibilityError(f"{path}: tensors do not match the stored config")
    return config, params, meta


def init_params_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    return {k: v.shape for k, v in init_params(config, 0).items()}


def check_columns(config: ModelConfig) -> None:
    unknown = [c for c in config.cardinalities if c not in COLUMNS]
    if unknown:
        raise CompatibilityError(f"unknown feature columns in config: {unknown}")
