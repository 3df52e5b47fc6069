"""Cold-start dataset construction and single-tenant adapter training.

Generates a synthetic FAQ knowledge base, mines BM25 hard negatives,
splits 8:1:1, then trains a bottleneck adapter + head on the frozen
encoder and reports test accuracy/AUC.
"""

from adapterdistill.backbone import Backbone, BackboneConfig
from adapterdistill.faq_data import build_dataset, make_synthetic_tenants
from adapterdistill.trainer import TrainConfig, evaluate_artifact, train_tenant


def main():
    kb = make_synthetic_tenants(1, 30, 0.0, seed=0)[0]
    print(f"knowledge base: {len(kb.points)} points, "
          f"{len(kb.all_questions())} questions")
    p = kb.points[0]
    print(f"sample point {p.point_id}: standard={p.standard_question!r}, "
          f"similar={p.similar_questions}")

    pairs = build_dataset(kb)
    counts = {s: len(pairs.split_of(s)) for s in ("train", "val", "test")}
    print(f"dataset: {len(pairs)} labeled pairs, splits {counts}")
    pos = pairs.examples[0]
    neg = next(e for e in pairs.examples if e.label == 0)
    print(f"positive pair: {pos.query!r} / {pos.candidate!r}")
    print(f"BM25 hard negative: {neg.query!r} / {neg.candidate!r}")

    config = BackboneConfig(max_seq_len=16)
    bb = Backbone(config)
    train_config = TrainConfig(epochs=8, mode="adapter", eta=1.0, seed=0)
    print(f"\ntraining a bottleneck-{train_config.bottleneck_dim} adapter "
          f"({train_config.epochs} epochs)...")
    artifact = train_tenant(pairs.split_of("train"), pairs.split_of("val"),
                            bb, train_config)
    for row in artifact.history[::3]:
        print(f"  epoch {row['epoch']}: ce_loss={row['ce_loss']:.4f}")

    report = evaluate_artifact(bb, artifact, pairs.split_of("test"))
    print(f"test accuracy={report.accuracy:.3f} auc={report.auc:.3f}")
    added = sum(p.size for p in artifact.adapter.params())
    print(f"trainable parameters added: {added} "
          f"({100.0 * added / bb.param_count():.2f}% of the backbone)")


if __name__ == "__main__":
    main()
