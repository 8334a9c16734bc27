"""
Teacher, student and the matched-filter ablation
================================================

Trains the 1000-1000-500-250-1 teacher on the raw flattened trace of the
low-SNR qubit, distills it into an FNN-B student on the compact features,
and repeats the distillation without the matched-filter input.
"""

import numpy as np

from qreadout import dataset, distill, nn, preprocess
from qreadout.evaluation import assignment_fidelity

QUBIT = 1
ts = dataset.generate_synthetic(dataset.desk_config(traces_per_config=300))
train, test = dataset.split(ts, 200, 100, seed=7)

teacher_cfg = nn.TrainConfig(learning_rate=1e-4, epochs=10, weight_decay=0.1,
                             dtype="float32", seed=11)
teacher, hist = nn.train_teacher(train.flat_raw(QUBIT, np.float32), train.states(QUBIT),
                                 nn.TEACHER, teacher_cfg)
print("teacher epoch losses:", np.round(hist.epoch_loss, 4))
f_teacher = assignment_fidelity(nn.predict(teacher, test.flat_raw(QUBIT)), test.states(QUBIT))[0]
print(f"teacher ({nn.param_count(nn.TEACHER):,} parameters): {f_teacher:.4f}")

pre = preprocess.fit_preprocessor(train, QUBIT, preprocess.AveragingSpec(100))
logits = distill.teacher_logits(teacher, train.flat_raw(QUBIT))
cfg = distill.DistillConfig(alpha=0.5, temperature=2.0, epochs=60, seed=5)

for with_mf in (True, False):
    feats = pre.features_for(train, include_mf=with_mf)
    view = distill.DistillBatchView(feats, train.flat_raw(QUBIT), train.states(QUBIT))
    spec = nn.NetworkSpec(feats.shape[1], (16, 8))
    student, _ = distill.train_student(teacher, view, spec, cfg, cached_logits=logits)
    f = assignment_fidelity(nn.predict(student, pre.features_for(test, include_mf=with_mf)),
                            test.states(QUBIT))[0]
    label = "with MF   " if with_mf else "without MF"
    print(f"student {label} ({nn.param_count(spec):,} parameters): {f:.4f}")

# The composite loss at a glance.
print("loss(alpha=0.5, T=1, s=0, t=2, y=1) =",
      round(float(distill.distill_loss(0.0, 2.0, 1, 0.5, 1.0)), 4))
