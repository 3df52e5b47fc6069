"""Two-stage distillation from prior tenants into a data-starved student.

Trains three teacher tenants, then a new tenant with only a tenth of its
training data, comparing a plain adapter against the distilled one.  The
fusion weights steer each token toward helpful teachers during training
and are thrown away afterwards, so both artifacts serve identically.
"""

import numpy as np

from adapterdistill.backbone import Backbone, BackboneConfig
from adapterdistill.faq_data import build_dataset, make_synthetic_tenants
from adapterdistill.trainer import TrainConfig, evaluate_artifact, train_tenant


def subsample(examples, frac, seed):
    order = np.random.default_rng(seed).permutation(len(examples))
    return [examples[i] for i in order[: max(1, int(frac * len(examples)))]]


def main():
    kbs = make_synthetic_tenants(4, 40, 0.5, seed=0)
    datasets = [build_dataset(kb) for kb in kbs]
    config = BackboneConfig(max_seq_len=16)
    bb = Backbone(config)

    print("training 3 teacher tenants...")
    teachers = []
    for i in range(3):
        art = train_tenant(datasets[i].split_of("train"), [], bb,
                           TrainConfig(epochs=6, mode="adapter", eta=1.0, seed=7))
        art.adapter.promote()
        teachers.append(art.adapter)
        print(f"  teacher {i} done "
              f"({len(datasets[i].split_of('train'))} training pairs)")

    student_data = datasets[3]
    small_train = subsample(student_data.split_of("train"), 0.10, seed=42)
    test = student_data.split_of("test")
    print(f"\nstudent tenant: {len(small_train)} training pairs "
          f"(10% subsample), {len(test)} test pairs")

    for mode in ("adapter", "adapter_distill", "adapter_distill_star"):
        cfg = TrainConfig(epochs=6, mode=mode, eta=1.0, seed=0)
        art = train_tenant(small_train, student_data.split_of("val"), bb, cfg,
                           teacher_finals=teachers)
        report = evaluate_artifact(bb, art, test)
        note = ""
        if mode.startswith("adapter_distill"):
            note = (" (self-teacher excluded)" if mode.endswith("star")
                    else f" (eta={art.eta})")
            assert art.omega is None, "fusion weights must not survive training"
        print(f"  {mode:<22} test accuracy={report.accuracy:.3f} "
              f"auc={report.auc:.3f}{note}")

    print("\nboth distilled artifacts are a plain adapter + head at inference;")
    print("the teachers and fusion weights left no trace in the served model.")


if __name__ == "__main__":
    main()
