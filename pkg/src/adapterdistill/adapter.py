"""Per-tenant bottleneck adapters.

One adapter block per transformer layer: down-projection, GELU,
up-projection, residual.  Up-projections start at zero so a fresh adapter
is an exact identity on the backbone output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backbone import BackboneConfig
from .errors import ConfigurationError, UsageError
from .tensor import Tensor

STAGE_FIRST = "first"
STAGE_FINAL = "final"


@dataclass
class AdapterLayer:
    down: Tensor
    down_bias: Tensor
    up: Tensor
    up_bias: Tensor

    def params(self) -> list[Tensor]:
        return [self.down, self.down_bias, self.up, self.up_bias]


@dataclass
class AdapterWeights:
    tenant_name: str
    bottleneck_dim: int
    layers: list[AdapterLayer] = field(default_factory=list)
    stage: str = STAGE_FIRST

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def hidden_dim(self) -> int:
        return self.layers[0].down.data.shape[0]

    def params(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def set_trainable(self, trainable: bool) -> None:
        for p in self.params():
            p.requires_grad = trainable
            p.grad = np.zeros_like(p.data) if trainable else None

    def promote(self) -> None:
        """Stage transition; only first -> final is legal."""
        if self.stage == STAGE_FINAL:
            raise UsageError(f"adapter {self.tenant_name!r} is already final")
        self.stage = STAGE_FINAL

    def copy(self, stage: str | None = None, trainable: bool = False) -> "AdapterWeights":
        out = AdapterWeights(self.tenant_name, self.bottleneck_dim,
                             stage=self.stage if stage is None else stage)
        for layer in self.layers:
            out.layers.append(AdapterLayer(*[Tensor(p.data.copy()) for p in layer.params()]))
        if trainable:
            out.set_trainable(True)
        return out


def init_adapter(tenant_name: str, config: BackboneConfig, bottleneck_dim: int = 8,
                 seed: int = 0, trainable: bool = True) -> AdapterWeights:
    """Near-identity init: small uniform down-projection, zero up-projection."""
    d, m = config.hidden_dim, bottleneck_dim
    if m >= d:
        raise ConfigurationError(f"bottleneck_dim {m} must be smaller than hidden_dim {d}")
    rng = np.random.default_rng(seed)
    w = AdapterWeights(tenant_name, m)
    for _ in range(config.num_layers):
        w.layers.append(AdapterLayer(
            down=Tensor(rng.uniform(-1e-2, 1e-2, size=(d, m))),
            down_bias=Tensor(np.zeros(m)),
            up=Tensor(np.zeros((m, d))),
            up_bias=Tensor(np.zeros(d)),
        ))
    if trainable:
        w.set_trainable(True)
    return w


def adapter_forward(h: Tensor, w: AdapterWeights, layer: int) -> Tensor:
    """z = h + up(gelu(down(h))) for the given layer (0-based)."""
    if not 0 <= layer < w.num_layers:
        raise UsageError(f"layer {layer} out of range 0..{w.num_layers - 1}")
    lw = w.layers[layer]
    mid = T.gelu(T.matmul(h, lw.down) + lw.down_bias)
    return h + (T.matmul(mid, lw.up) + lw.up_bias)


def adapter_layer_param_count(d: int, m: int) -> int:
    return d * m + m + m * d + d


def added_params_fraction(adapter: AdapterWeights | None, backbone: BackboneConfig,
                          include_fusion: bool = False, num_teachers: int = 1,
                          bottleneck_dim: int | None = None) -> float:
    """Trainable added parameters as a percentage of backbone parameters.

    With include_fusion the per-layer Query/Key/Value matrices (3 d^2 per
    layer) are counted on top of the adapter.  Teacher count does not change
    the fusion size, so identical adapters report identical fractions with
    or without distillation.
    """
    d, L = backbone.hidden_dim, backbone.num_layers
    m = adapter.bottleneck_dim if adapter is not None else bottleneck_dim
    if m is None:
        raise ConfigurationError("need an adapter or an explicit bottleneck_dim")
    added = L * adapter_layer_param_count(d, m)
    if include_fusion:
        added += 3 * d * d * L
    return 100.0 * added / backbone_param_count(backbone)


def backbone_param_count(config: BackboneConfig) -> int:
    """Parameter count of the frozen encoder, from its construction recipe."""
    d, ffn, L = config.hidden_dim, config.ffn_dim, config.num_layers
    emb = config.vocab_size * d + config.max_seq_len * d
    per_layer = (4 * (d * d + d)          # attention projections
                 + 2 * 2 * d              # two layernorms
                 + d * ffn + ffn + ffn * d + d)
    pool = d * d + d
    return emb + L * per_layer + pool
