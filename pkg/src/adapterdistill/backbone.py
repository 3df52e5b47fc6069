"""Frozen pseudo-pretrained transformer encoder.

The encoder stands in for a real pretrained checkpoint: weights are drawn
from a seeded RNG once, then frozen.  Text goes through a deterministic
hashing tokenizer.  `encode_pair` exposes the post-feed-forward hidden
state of every layer, which is where per-tenant adapters plug in.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor

CLS_ID = 0
PAD_ID = 1
SEP_ID = 2
NUM_RESERVED = 3

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


@dataclass(frozen=True)
class BackboneConfig:
    vocab_size: int = 8192
    hidden_dim: int = 64
    num_layers: int = 4
    num_heads: int = 4
    ffn_dim: int = 128
    max_seq_len: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.hidden_dim % self.num_heads != 0:
            raise ConfigurationError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.max_seq_len < 2:
            raise ConfigurationError(f"max_seq_len must be >= 2, got {self.max_seq_len}")
        for name in ("vocab_size", "hidden_dim", "num_layers", "num_heads", "ffn_dim"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size, "hidden_dim": self.hidden_dim,
            "num_layers": self.num_layers, "num_heads": self.num_heads,
            "ffn_dim": self.ffn_dim, "max_seq_len": self.max_seq_len,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(**{k: int(v) for k, v in d.items()})


def hash_token(token: str, vocab_size: int) -> int:
    """Stable token -> id mapping into [NUM_RESERVED, vocab_size)."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    bucket = int.from_bytes(digest, "little") % (vocab_size - NUM_RESERVED)
    return NUM_RESERVED + bucket


def tokenize(text: str, max_len: int, vocab_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Lowercase, split on non-word characters, hash into the vocabulary.

    Prepends the classifier token and pads/truncates to max_len.  Returns
    (ids, mask) with mask 1 on real tokens and 0 on padding.
    """
    pieces = _TOKEN_RE.findall(text.lower())
    ids = [CLS_ID] + [hash_token(p, vocab_size) for p in pieces]
    ids = ids[:max_len]
    mask = [1] * len(ids)
    while len(ids) < max_len:
        ids.append(PAD_ID)
        mask.append(0)
    return np.array(ids, dtype=np.int64), np.array(mask, dtype=np.float64)


def tokenize_pair(query: str, candidate: str, max_len: int, vocab_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Joint "classifier + query + separator + candidate" encoding."""
    q = _TOKEN_RE.findall(query.lower())
    c = _TOKEN_RE.findall(candidate.lower())
    ids = ([CLS_ID] + [hash_token(t, vocab_size) for t in q]
           + [SEP_ID] + [hash_token(t, vocab_size) for t in c])
    ids = ids[:max_len]
    mask = [1] * len(ids)
    while len(ids) < max_len:
        ids.append(PAD_ID)
        mask.append(0)
    return np.array(ids, dtype=np.int64), np.array(mask, dtype=np.float64)


@dataclass
class LayerWeights:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    w_ff1: Tensor
    b_ff1: Tensor
    w_ff2: Tensor
    b_ff2: Tensor
    ln2_g: Tensor
    ln2_b: Tensor

    def params(self) -> list[Tensor]:
        return [self.wq, self.bq, self.wk, self.bk, self.wv, self.bv,
                self.wo, self.bo, self.ln1_g, self.ln1_b,
                self.w_ff1, self.b_ff1, self.w_ff2, self.b_ff2,
                self.ln2_g, self.ln2_b]


@dataclass
class HeadWeights:
    """Per-tenant binary classification head: sigmoid(pooled . w + b)."""
    w: Tensor
    b: Tensor

    def params(self) -> list[Tensor]:
        return [self.w, self.b]

    def copy(self) -> "HeadWeights":
        out = HeadWeights(Tensor(self.w.data.copy(), True), Tensor(self.b.data.copy(), True))
        return out


class Backbone:
    """Seeded, frozen encoder.  Immutable after construction."""

    def __init__(self, config: BackboneConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        d, ffn = config.hidden_dim, config.ffn_dim

        def w(*shape, scale=None):
            if scale is None:
                scale = np.sqrt(2.0 / sum(shape)) if len(shape) > 1 else 0.0
            if scale == 0.0:
                return Tensor(np.zeros(shape))
            return Tensor(rng.normal(0.0, scale, size=shape))

        self.token_emb = Tensor(rng.normal(0.0, 0.5, size=(config.vocab_size, d)))
        self.pos_emb = Tensor(rng.normal(0.0, 0.1, size=(config.max_seq_len, d)))
        self.layers: list[LayerWeights] = []
        for _ in range(config.num_layers):
            self.layers.append(LayerWeights(
                wq=w(d, d), bq=w(d), wk=w(d, d), bk=w(d), wv=w(d, d), bv=w(d),
                wo=w(d, d), bo=w(d),
                ln1_g=Tensor(np.ones(d)), ln1_b=Tensor(np.zeros(d)),
                w_ff1=w(d, ffn), b_ff1=w(ffn), w_ff2=w(ffn, d), b_ff2=w(d),
                ln2_g=Tensor(np.ones(d)), ln2_b=Tensor(np.zeros(d)),
            ))
        self.pool_w = w(d, d)
        self.pool_b = w(d)

    def params(self) -> list[Tensor]:
        out = [self.token_emb, self.pos_emb]
        for layer in self.layers:
            out.extend(layer.params())
        out.extend([self.pool_w, self.pool_b])
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def weights_hash(self) -> str:
        h = hashlib.sha256()
        for p in self.params():
            h.update(p.data.tobytes())
        return h.hexdigest()

    def unfrozen_copy(self) -> "Backbone":
        """Tenant-private trainable copy (full fine-tuning baseline)."""
        other = Backbone(self.config)
        for dst, src in zip(other.params(), self.params()):
            dst.data = src.data.copy()
            dst.requires_grad = True
            dst.grad = np.zeros_like(dst.data)
        return other

    # -- forward ----------------------------------------------------------

    def _attention(self, x: Tensor, layer: LayerWeights, mask: np.ndarray) -> Tensor:
        cfg = self.config
        d, H = cfg.hidden_dim, cfg.num_heads
        dh = d // H
        q = T.matmul(x, layer.wq) + layer.bq
        k = T.matmul(x, layer.wk) + layer.bk
        v = T.matmul(x, layer.wv) + layer.bv
        bias = np.where(mask > 0, 0.0, -1e9)[None, :]  # additive key mask
        heads = []
        for h in range(H):
            qh = T.cols(q, h * dh, (h + 1) * dh)
            kh = T.cols(k, h * dh, (h + 1) * dh)
            vh = T.cols(v, h * dh, (h + 1) * dh)
            scores = T.matmul(qh, T.transpose(kh)) * (1.0 / np.sqrt(dh))
            weights = T.softmax(scores + Tensor(bias))
            heads.append(T.matmul(weights, vh))
        return T.matmul(T.concat_cols(heads), layer.wo) + layer.bo

    def forward(self, ids: np.ndarray, mask: np.ndarray, adapter_hook=None):
        """Run the encoder.

        adapter_hook(layer_index, h) may transform the post-FFN hidden state
        h (the adapter insertion point); identity when None.  Returns
        (per_layer_h, pooled) where per_layer_h[l] is the pre-adapter hidden
        state of layer l.
        """
        tlen = len(ids)
        x = T.embedding(self.token_emb, ids) + T.rows(self.pos_emb, 0, tlen)
        per_layer_h: list[Tensor] = []
        for li, layer in enumerate(self.layers):
            a = T.layernorm(x + self._attention(x, layer, mask), layer.ln1_g, layer.ln1_b)
            f = T.matmul(T.gelu(T.matmul(a, layer.w_ff1) + layer.b_ff1), layer.w_ff2) + layer.b_ff2
            per_layer_h.append(f)
            z = f if adapter_hook is None else adapter_hook(li, f)
            x = T.layernorm(a + z, layer.ln2_g, layer.ln2_b)
        first = T.rows(x, 0, 1)
        pooled = T.tanh(T.matmul(first, self.pool_w) + self.pool_b)
        return per_layer_h, pooled

    def encode_pair(self, query: str, candidate: str, adapter_hook=None):
        cfg = self.config
        ids, mask = tokenize_pair(query, candidate, cfg.max_seq_len, cfg.vocab_size)
        return self.forward(ids, mask, adapter_hook)


def classify(pooled: Tensor, head: HeadWeights) -> Tensor:
    """Probability of a positive match (sigmoid of an affine map)."""
    d = pooled.data.shape[-1]
    if head.w.data.shape[0] != d:
        raise DimensionError(
            f"head dimension {head.w.data.shape} does not match pooled dim {d}"
        )
    logit = T.matmul(pooled, head.w) + head.b
    return T.sigmoid(logit)


def classify_logit(pooled: Tensor, head: HeadWeights) -> Tensor:
    d = pooled.data.shape[-1]
    if head.w.data.shape[0] != d:
        raise DimensionError(
            f"head dimension {head.w.data.shape} does not match pooled dim {d}"
        )
    return T.matmul(pooled, head.w) + head.b


def predict_label(probability: float, threshold: float = 0.5) -> int:
    """Decision rule: probability at or above the threshold is positive."""
    return 1 if probability >= threshold else 0


def new_head(dim: int, rng: np.random.Generator) -> HeadWeights:
    return HeadWeights(
        w=Tensor(rng.normal(0.0, 0.05, size=(dim, 1)), requires_grad=True),
        b=Tensor(np.zeros((1, 1)), requires_grad=True),
    )
