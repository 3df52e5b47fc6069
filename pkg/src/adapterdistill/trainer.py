"""Two-stage adapter distillation training, baselines, and evaluation.

Stage 1 trains a fresh adapter + head on the tenant's data under binary
cross-entropy.  Stage 2 continues training the adapter jointly with the
fusion weights under cross-entropy plus the weighted distillation loss
against the frozen teacher set.  Baselines: full fine-tuning, head-only,
adapter-only, and AdapterFusion (which keeps the fusion layer at
inference).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .adapter import AdapterWeights, adapter_forward, init_adapter
from .backbone import Backbone, HeadWeights, classify_logit, new_head, tokenize_pair
from .errors import ConfigurationError, UsageError
from .faq_data import Example
from .fusion import (FusionWeights, TeacherSet, combined_loss, fusion_attend,
                     init_fusion, make_teacher_set)
from .metrics import accuracy as _accuracy, auc as _auc
from .tensor import Tensor, no_grad

ETA_GRID_DEFAULT = [math.exp(-2), math.exp(-1), 1.0, math.e, math.e ** 2]

MODES = ("full", "head", "adapter", "adapter_fusion", "adapter_distill", "adapter_distill_star")


@dataclass
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 0.5
    warmup_frac: float = 0.1
    weight_decay: float = 0.01
    batch_size: int = 8
    eta: float | list[float] = field(default_factory=lambda: list(ETA_GRID_DEFAULT))
    seed: int = 0
    mode: str = "adapter_distill"
    bottleneck_dim: int = 8
    include_self: bool = True
    distill_reduction: str = "mean_square"
    stop_grad_o: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if isinstance(self.eta, list) and not self.eta and self.mode.startswith("adapter_distill"):
            raise ConfigurationError("eta grid must be nonempty for distillation modes")


@dataclass
class EvalReport:
    accuracy: float
    auc: float | None
    split_sizes: dict[str, int] = field(default_factory=dict)
    loss_curves: list[dict] = field(default_factory=list)


@dataclass
class TrainedArtifact:
    mode: str
    adapter: AdapterWeights | None
    head: HeadWeights
    omega: FusionWeights | None = None          # kept only by adapter_fusion
    fusion_members: list[AdapterWeights] | None = None
    backbone: Backbone | None = None            # tenant-private copy (full mode)
    history: list[dict] = field(default_factory=list)
    eta: float | None = None


# ---------------------------------------------------------------------------
# plumbing

def encode_examples(examples: list[Example], config) -> list[tuple[np.ndarray, np.ndarray, int]]:
    return [tokenize_pair(e.query, e.candidate, config.max_seq_len, config.vocab_size)
            + (e.label,) for e in examples]


def _lr_at(step: int, total: int, cfg: TrainConfig) -> float:
    warm = max(1, int(cfg.warmup_frac * total))
    if step < warm:
        return cfg.learning_rate * (step + 1) / warm
    if total == warm:
        return cfg.learning_rate
    return cfg.learning_rate * max(0.0, 1.0 - (step - warm) / (total - warm))


def _sgd_step(groups: list[tuple[Tensor, bool]], lr: float, weight_decay: float) -> None:
    for p, decay in groups:
        g = p.grad
        if decay and weight_decay:
            g = g + weight_decay * p.data
        p.data -= lr * g


def _param_groups(adapter: AdapterWeights | None, head: HeadWeights | None,
                  omega: FusionWeights | None = None,
                  backbone: Backbone | None = None) -> list[tuple[Tensor, bool]]:
    """(tensor, weight-decay?) pairs; biases and gains are not decayed."""
    groups: list[tuple[Tensor, bool]] = []
    if adapter is not None:
        for layer in adapter.layers:
            groups += [(layer.down, True), (layer.down_bias, False),
                       (layer.up, True), (layer.up_bias, False)]
    if head is not None:
        groups += [(head.w, True), (head.b, False)]
    if omega is not None:
        for q, k, v in omega.layers:
            groups += [(q, True), (k, True), (v, True)]
    if backbone is not None:
        for p in backbone.params():
            groups.append((p, p.data.ndim > 1))
    return groups


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _ce_loss(batch, bb: Backbone, head: HeadWeights, adapter: AdapterWeights | None):
    total = None
    for ids, mask, label in batch:
        if adapter is None:
            _, pooled = bb.forward(ids, mask)
        else:
            _, pooled = bb.forward(ids, mask,
                                   adapter_hook=lambda li, h: adapter_forward(h, adapter, li))
        ce = T.bce_with_logits(classify_logit(pooled, head), float(label))
        total = ce if total is None else total + ce
    return total * (1.0 / len(batch))


# ---------------------------------------------------------------------------
# stage 1

def train_stage1(train_examples: list[Example], bb: Backbone, config: TrainConfig):
    """Train a fresh adapter + head on local data under cross-entropy.

    Returns (adapter with stage "first", head, per-epoch history).
    """
    if not train_examples:
        raise UsageError("train_stage1: empty training data")
    rng = np.random.default_rng(config.seed)
    adapter = init_adapter("", bb.config, config.bottleneck_dim, seed=config.seed)
    head = new_head(bb.config.hidden_dim, rng)
    encoded = encode_examples(train_examples, bb.config)
    groups = _param_groups(adapter, head)
    history = _run_ce_training(encoded, bb, head, adapter, groups, config, rng)
    return adapter, head, history


def _run_ce_training(encoded, bb, head, adapter, groups, config, rng):
    n_batches = math.ceil(len(encoded) / config.batch_size)
    total_steps = config.epochs * n_batches
    history, step = [], 0
    for epoch in range(config.epochs):
        epoch_loss = 0.0
        for idx in _epoch_batches(len(encoded), config.batch_size, rng):
            batch = [encoded[i] for i in idx]
            for p, _ in groups:
                p.zero_grad()
            loss = _ce_loss(batch, bb, head, adapter)
            T.backward(loss)
            _sgd_step(groups, _lr_at(step, total_steps, config), config.weight_decay)
            epoch_loss += loss.item() * len(batch)
            step += 1
        history.append({"epoch": epoch, "ce_loss": epoch_loss / len(encoded),
                        "distill_loss": 0.0})
    return history


# ---------------------------------------------------------------------------
# stage 2

def train_stage2(train_examples: list[Example], bb: Backbone,
                 student_first: AdapterWeights, teachers: TeacherSet,
                 config: TrainConfig, eta: float, head: HeadWeights):
    """Joint optimization of the student adapter and fusion weights under
    cross-entropy + eta * distillation.  Teachers stay frozen; the fusion
    weights are discarded by the caller after training.

    Returns (final adapter, head, per-epoch history).
    """
    if student_first.stage != "first":
        raise UsageError("train_stage2 needs a first-stage student adapter")
    if teachers.adapters and teachers.adapters[0].hidden_dim != bb.config.hidden_dim:
        raise ConfigurationError("teacher/backbone hidden dimension mismatch")
    if eta < 0:
        raise ConfigurationError(f"eta must be nonnegative, got {eta}")
    rng = np.random.default_rng(config.seed)
    student = student_first.copy(trainable=True)
    head = head.copy()
    omega = init_fusion(bb.config.hidden_dim, bb.config.num_layers, seed=config.seed)
    effective_eta = eta if len(teachers) > 0 else 0.0
    encoded = encode_examples(train_examples, bb.config)
    groups = _param_groups(student, head, omega=omega)

    n_batches = math.ceil(len(encoded) / config.batch_size)
    total_steps = config.epochs * n_batches
    history, step = [], 0
    for epoch in range(config.epochs):
        ce_sum = dl_sum = 0.0
        for idx in _epoch_batches(len(encoded), config.batch_size, rng):
            batch = [encoded[i] for i in idx]
            for p, _ in groups:
                p.zero_grad()
            ce = _ce_loss(batch, bb, head, student)
            if effective_eta > 0:
                dl = _batch_distill(batch, bb, student, teachers, omega, config)
                loss = ce + dl * effective_eta
                dl_sum += dl.item() * len(batch)
            else:
                loss = ce
            T.backward(loss)
            _sgd_step(groups, _lr_at(step, total_steps, config), config.weight_decay)
            ce_sum += ce.item() * len(batch)
            step += 1
        history.append({"epoch": epoch, "ce_loss": ce_sum / len(encoded),
                        "distill_loss": dl_sum / len(encoded)})
    student.promote()
    return student, head, history


def _batch_distill(batch, bb, student, teachers, omega, config):
    from .fusion import distill_example_forward, distill_loss
    total = None
    for ids, mask, _ in batch:
        _, o_list, z_list, _ = distill_example_forward(
            bb, ids, mask, student, teachers, omega, stop_grad_o=config.stop_grad_o)
        dl = distill_loss(o_list, z_list, mask, reduction=config.distill_reduction)
        total = dl if total is None else total + dl
    return total * (1.0 / len(batch))


# Inefficient but faithful single-call form of the stage-2 objective; the
# training loop above computes the same quantity batch by batch.
def stage2_loss(batch, bb, student, head, teachers, omega, eta, config: TrainConfig | None = None):
    cfg = config or TrainConfig()
    return combined_loss(batch, bb, student, head, teachers, omega, eta,
                         reduction=cfg.distill_reduction, stop_grad_o=cfg.stop_grad_o)


# ---------------------------------------------------------------------------
# eta selection

def select_eta(train_examples, val_examples, bb, student_first, teachers,
               config: TrainConfig, grid: list[float] | None = None,
               head: HeadWeights | None = None):
    """Train stage 2 once per grid point (same seed) and pick the eta with
    the best validation accuracy; ties go to larger AUC, then smaller eta."""
    if grid is None:
        grid = config.eta if isinstance(config.eta, list) else [config.eta]
    if not grid:
        raise ConfigurationError("empty eta grid")
    if len(grid) == 1:
        return grid[0], []
    if not val_examples:
        raise UsageError("select_eta: empty validation split")
    if head is None:
        head = new_head(bb.config.hidden_dim, np.random.default_rng(config.seed))
    best = None
    trials = []
    for eta in grid:
        adapter, head2, _ = train_stage2(train_examples, bb, student_first, teachers,
                                         config, eta, head=head)
        report = evaluate_predictions(
            predict_many(bb, val_examples, head=head2, adapter=adapter),
            [e.label for e in val_examples])
        trials.append((eta, report.accuracy, report.auc))
        key = (report.accuracy, report.auc if report.auc is not None else -1.0, -eta)
        if best is None or key > best[0]:
            best = (key, eta)
    return best[1], trials


# ---------------------------------------------------------------------------
# inference + evaluation

def predict_prob(bb: Backbone, ids, mask, head: HeadWeights,
                 adapter: AdapterWeights | None = None,
                 omega: FusionWeights | None = None,
                 fusion_members: list[AdapterWeights] | None = None) -> float:
    """Single forward pass; returns the positive-match probability."""
    with no_grad():
        if omega is not None:
            if not fusion_members:
                raise UsageError("fusion inference needs member adapters")

            def hook(li, h):
                zs = [adapter_forward(h, a, li) for a in fusion_members]
                o, _ = fusion_attend(h, zs, omega.layers[li])
                return o

            _, pooled = bb.forward(ids, mask, adapter_hook=hook)
        elif adapter is not None:
            _, pooled = bb.forward(ids, mask,
                                   adapter_hook=lambda li, h: adapter_forward(h, adapter, li))
        else:
            _, pooled = bb.forward(ids, mask)
        logit = classify_logit(pooled, head)
        return float(1.0 / (1.0 + np.exp(-logit.item())))


def predict_many(bb: Backbone, examples: list[Example], head: HeadWeights,
                 adapter: AdapterWeights | None = None,
                 omega: FusionWeights | None = None,
                 fusion_members: list[AdapterWeights] | None = None) -> list[float]:
    cfg = bb.config
    out = []
    for e in examples:
        ids, mask = tokenize_pair(e.query, e.candidate, cfg.max_seq_len, cfg.vocab_size)
        out.append(predict_prob(bb, ids, mask, head, adapter, omega, fusion_members))
    return out


def evaluate_predictions(probabilities: list[float], labels: list[int],
                         split_sizes: dict[str, int] | None = None) -> EvalReport:
    """Accuracy on thresholded labels, AUC on raw probabilities.  AUC is
    None when the set is single-class."""
    if not labels:
        raise UsageError("evaluate on empty test set")
    acc = _accuracy(probabilities, labels)
    try:
        area = _auc(probabilities, labels)
    except UsageError:
        area = None
    return EvalReport(accuracy=acc, auc=area, split_sizes=split_sizes or {})


def evaluate_artifact(bb: Backbone, artifact: TrainedArtifact,
                      examples: list[Example]) -> EvalReport:
    backbone = artifact.backbone if artifact.backbone is not None else bb
    probs = predict_many(backbone, examples, artifact.head, adapter=artifact.adapter,
                         omega=artifact.omega, fusion_members=artifact.fusion_members)
    report = evaluate_predictions(probs, [e.label for e in examples])
    report.loss_curves = artifact.history
    return report


# ---------------------------------------------------------------------------
# baselines + orchestration

def train_baseline(mode: str, train_examples, bb: Backbone, config: TrainConfig,
                   teacher_finals: list[AdapterWeights] | None = None) -> TrainedArtifact:
    if mode not in ("full", "head", "adapter", "adapter_fusion"):
        raise ConfigurationError(f"unknown baseline mode {mode!r}")
    rng = np.random.default_rng(config.seed)
    if mode == "adapter":
        adapter, head, history = train_stage1(train_examples, bb, config)
        adapter.set_trainable(False)
        return TrainedArtifact("adapter", adapter, head, history=history)
    if mode == "head":
        head = new_head(bb.config.hidden_dim, rng)
        encoded = encode_examples(train_examples, bb.config)
        history = _run_ce_training(encoded, bb, head, None, _param_groups(None, head),
                                  config, rng)
        return TrainedArtifact("head", None, head, history=history)
    if mode == "full":
        private = bb.unfrozen_copy()
        head = new_head(bb.config.hidden_dim, rng)
        encoded = encode_examples(train_examples, bb.config)
        groups = _param_groups(None, head, backbone=private)
        history = _run_ce_training(encoded, private, head, None, groups, config, rng)
        for p in private.params():
            p.requires_grad = False
            p.grad = None
        return TrainedArtifact("full", None, head, backbone=private, history=history)
    # adapter_fusion: stage 1, then train fusion + head over the frozen
    # member adapters (teachers plus the tenant's own); the fusion layer
    # stays in the inference artifact.
    adapter, head, history1 = train_stage1(train_examples, bb, config)
    adapter.set_trainable(False)
    adapter.promote()
    members = [a.copy() for a in (teacher_finals or [])] + [adapter]
    for a in members:
        a.set_trainable(False)
    omega = init_fusion(bb.config.hidden_dim, bb.config.num_layers, seed=config.seed)
    head2 = head.copy()
    encoded = encode_examples(train_examples, bb.config)
    groups = _param_groups(None, head2, omega=omega)
    n_batches = math.ceil(len(encoded) / config.batch_size)
    total_steps = config.epochs * n_batches
    history2, step = [], 0
    for epoch in range(config.epochs):
        epoch_loss = 0.0
        for idx in _epoch_batches(len(encoded), config.batch_size, rng):
            batch = [encoded[i] for i in idx]
            for p, _ in groups:
                p.zero_grad()
            total = None
            for ids, mask, label in batch:
                def hook(li, h):
                    zs = [adapter_forward(h, a, li) for a in members]
                    o, _ = fusion_attend(h, zs, omega.layers[li])
                    return o
                _, pooled = bb.forward(ids, mask, adapter_hook=hook)
                ce = T.bce_with_logits(classify_logit(pooled, head2), float(label))
                total = ce if total is None else total + ce
            loss = total * (1.0 / len(batch))
            T.backward(loss)
            _sgd_step(groups, _lr_at(step, total_steps, config), config.weight_decay)
            epoch_loss += loss.item() * len(batch)
            step += 1
        history2.append({"epoch": epoch, "ce_loss": epoch_loss / len(encoded),
                         "distill_loss": 0.0})
    omega.set_trainable(False)
    return TrainedArtifact("adapter_fusion", adapter, head2, omega=omega,
                           fusion_members=members, history=history1 + history2)


def train_tenant(train_examples, val_examples, bb: Backbone, config: TrainConfig,
                 teacher_finals: list[AdapterWeights] | None = None) -> TrainedArtifact:
    """Run the full training procedure for one tenant in the configured mode."""
    teacher_finals = teacher_finals or []
    mode = config.mode
    if mode in ("full", "head", "adapter", "adapter_fusion"):
        return train_baseline(mode, train_examples, bb, config, teacher_finals)

    include_self = config.include_self and mode != "adapter_distill_star"
    student_first, head1, history1 = train_stage1(train_examples, bb, config)
    student_first.set_trainable(False)
    teachers = make_teacher_set(teacher_finals,
                                student_first if include_self else None)
    grid = config.eta if isinstance(config.eta, list) else [config.eta]
    if len(grid) > 1 and len(teachers) > 0:
        eta, _ = select_eta(train_examples, val_examples, bb, student_first,
                            teachers, config, grid, head=head1)
    else:
        eta = grid[0]
    adapter, head, history2 = train_stage2(train_examples, bb, student_first,
                                           teachers, config, eta, head=head1)
    adapter.set_trainable(False)
    head.w.requires_grad = False
    head.b.requires_grad = False
    return TrainedArtifact(mode, adapter, head, history=history1 + history2, eta=eta)


# ---------------------------------------------------------------------------
# run reports

def write_report(path, header: dict, metrics: dict) -> None:
    """Structured text report: key=value header lines plus a metrics table."""
    lines = [f"{k}={v}" for k, v in header.items()]
    lines.append("")
    lines.append(f"{'metric':<20} value")
    for k, v in metrics.items():
        lines.append(f"{k:<20} {v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_curves_csv(path, history: list[dict],
                     val_accuracy: float | None = None,
                     val_auc: float | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "ce_loss", "distill_loss", "val_accuracy", "val_auc"])
        for row in history:
            writer.writerow([row["epoch"], row["ce_loss"], row["distill_loss"],
                             val_accuracy if val_accuracy is not None else "",
                             val_auc if val_auc is not None else ""])
