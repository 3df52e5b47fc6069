"""Stage-2 machinery: fusion attention over teacher adapters + distillation loss.

Per layer, Query/Key/Value matrices attend from the backbone hidden state
over the outputs of N frozen teacher adapters; the fused output is pulled
toward the live student adapter output by a squared-difference loss.  The
fusion weights exist only during training and are never part of a tenant's
inference artifact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .adapter import AdapterWeights, STAGE_FINAL, STAGE_FIRST, adapter_forward
from .backbone import Backbone
from .errors import ConfigurationError, UsageError
from .tensor import Tensor


@dataclass
class FusionWeights:
    """Per-layer (Q, K, V), each hidden_dim x hidden_dim."""
    layers: list[tuple[Tensor, Tensor, Tensor]] = field(default_factory=list)

    def params(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer]

    def set_trainable(self, trainable: bool) -> None:
        for p in self.params():
            p.requires_grad = trainable
            p.grad = np.zeros_like(p.data) if trainable else None


def init_fusion(hidden_dim: int, num_layers: int, seed: int = 0,
                trainable: bool = True) -> FusionWeights:
    """Q, K small uniform; V near identity, so early fused output is close
    to a plain average of the teacher outputs."""
    rng = np.random.default_rng(seed)
    d = hidden_dim
    omega = FusionWeights()
    for _ in range(num_layers):
        q = Tensor(rng.uniform(-1e-3, 1e-3, size=(d, d)))
        k = Tensor(rng.uniform(-1e-3, 1e-3, size=(d, d)))
        v = Tensor(np.eye(d) + rng.uniform(-1e-3, 1e-3, size=(d, d)))
        omega.layers.append((q, k, v))
    if trainable:
        omega.set_trainable(True)
    return omega


@dataclass
class TeacherSet:
    """Frozen teacher adapters, in registration order; optionally the
    student's own frozen first-stage copy as the last member."""
    adapters: list[AdapterWeights] = field(default_factory=list)
    include_self: bool = True

    def __post_init__(self):
        for i, a in enumerate(self.adapters):
            for p in a.params():
                if p.requires_grad:
                    raise UsageError(f"teacher adapter {a.tenant_name!r} must be frozen")
            last = self.include_self and i == len(self.adapters) - 1
            if last and a.stage != STAGE_FIRST:
                raise UsageError("self-teacher must be the first-stage copy")
            if not last and a.stage != STAGE_FINAL:
                raise UsageError(f"teacher {a.tenant_name!r} must be a final adapter")

    def __len__(self) -> int:
        return len(self.adapters)


def make_teacher_set(finals: list[AdapterWeights], self_first: AdapterWeights | None) -> TeacherSet:
    teachers = [a.copy() for a in finals]
    include_self = self_first is not None
    if include_self:
        teachers.append(self_first.copy(stage=STAGE_FIRST))
    for a in teachers:
        a.set_trainable(False)
    return TeacherSet(adapters=teachers, include_self=include_self)


def fusion_attend(h: Tensor, teacher_outputs: list[Tensor],
                  omega_layer: tuple[Tensor, Tensor, Tensor]) -> tuple[Tensor, Tensor]:
    """Attention over teacher outputs for one layer.

    Per token: query = h Q, key_n = z_n K, value_n = z_n V; the weights p
    are a softmax over teachers of <query, key_n>, and the output is the
    p-weighted sum of values.  Returns (o [T x d], p [T x N]).
    """
    if not teacher_outputs:
        raise UsageError("fusion_attend needs at least one teacher output")
    q_mat, k_mat, v_mat = omega_layer
    d = h.data.shape[1]
    ones = Tensor(np.ones((d, 1)))
    q = T.matmul(h, q_mat)
    values, logits = [], []
    for z in teacher_outputs:
        values.append(T.matmul(z, v_mat))
        logits.append(T.matmul(T.mul(q, T.matmul(z, k_mat)), ones))
    p = T.softmax(T.concat_cols(logits))
    o = None
    for n, v in enumerate(values):
        term = T.mul(T.cols(p, n, n + 1), v)
        o = term if o is None else o + term
    return o, p


def distill_loss(o_per_layer: list[Tensor], z_per_layer: list[Tensor],
                 mask: np.ndarray, reduction: str = "mean_square") -> Tensor:
    """Distance between fused teacher output and student output.

    mean_square: mean over layers, unmasked tokens, and hidden dims of the
    squared difference.  l2: mean over layers of the Frobenius norm over
    unmasked positions.
    """
    mask = np.asarray(mask, dtype=np.float64)
    n_tok = float(mask.sum())
    if n_tok == 0:
        raise UsageError("distill_loss: mask marks no tokens")
    if len(o_per_layer) != len(z_per_layer):
        raise UsageError("o and z layer lists differ in length")
    mask_col = Tensor(mask[:, None])
    total = None
    for o, z in zip(o_per_layer, z_per_layer):
        diff = o - z
        sq = T.tsum(T.mul(T.mul(diff, diff), mask_col))
        if reduction == "l2":
            sq = T.sqrt(sq)
        total = sq if total is None else total + sq
    L = len(o_per_layer)
    if reduction == "mean_square":
        d = o_per_layer[0].data.shape[1]
        return total * (1.0 / (L * n_tok * d))
    if reduction == "l2":
        return total * (1.0 / L)
    raise ConfigurationError(f"unknown reduction {reduction!r}")


def distill_example_forward(bb: Backbone, ids: np.ndarray, mask: np.ndarray,
                            student: AdapterWeights, teachers: TeacherSet,
                            omega: FusionWeights, stop_grad_o: bool = False):
    """One stage-2 forward pass.

    The main (inference) path runs the student adapter; teacher outputs and
    the fused output are computed on the side at every layer.  Returns
    (pooled, o_per_layer, z_per_layer, p_per_layer).
    """
    o_list: list[Tensor] = []
    z_list: list[Tensor] = []
    p_list: list[Tensor] = []

    def hook(li: int, h: Tensor) -> Tensor:
        z_student = adapter_forward(h, student, li)
        zs = [adapter_forward(h, t, li) for t in teachers.adapters]
        o, p = fusion_attend(h, zs, omega.layers[li])
        if stop_grad_o:
            o = o.detach()
        o_list.append(o)
        z_list.append(z_student)
        p_list.append(p)
        return z_student

    _, pooled = bb.forward(ids, mask, adapter_hook=hook)
    return pooled, o_list, z_list, p_list


def combined_loss(batch, bb: Backbone, student: AdapterWeights, head,
                  teachers: TeacherSet, omega: FusionWeights, eta: float,
                  reduction: str = "mean_square", stop_grad_o: bool = False) -> Tensor:
    """Mean cross-entropy on the student path plus eta times the mean
    distillation loss over the batch.

    batch: iterable of (ids, mask, label).  With eta == 0 the distillation
    term is skipped entirely, so the loss equals the stage-1 objective and
    the fusion weights receive no gradient.
    """
    from .backbone import classify_logit

    if eta < 0:
        raise ConfigurationError(f"eta must be nonnegative, got {eta}")
    ce_total = None
    distill_total = None
    n = 0
    for ids, mask, label in batch:
        if eta == 0:
            def hook(li, h):
                return adapter_forward(h, student, li)
            _, pooled = bb.forward(ids, mask, adapter_hook=hook)
        else:
            pooled, o_list, z_list, _ = distill_example_forward(
                bb, ids, mask, student, teachers, omega, stop_grad_o=stop_grad_o)
            dl = distill_loss(o_list, z_list, mask, reduction=reduction)
            distill_total = dl if distill_total is None else distill_total + dl
        ce = T.bce_with_logits(classify_logit(pooled, head), float(label))
        ce_total = ce if ce_total is None else ce_total + ce
        n += 1
    if n == 0:
        raise UsageError("combined_loss: empty batch")
    loss = ce_total * (1.0 / n)
    if eta != 0:
        loss = loss + (distill_total * (eta / n))
    return loss
