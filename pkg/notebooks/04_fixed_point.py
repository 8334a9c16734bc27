"""
Q16.16 inference and the cycle model
====================================

Quantizes a trained FNN-A student with its preprocessing constants, runs the
integer datapath on ADC traces, compares it with the float model, and prints
the per-stage latency report.
"""

import numpy as np

from qreadout import dataset, fxp, latency, nn, preprocess
from qreadout.evaluation import agreement

ts = dataset.generate_synthetic(dataset.desk_config(traces_per_config=150))
train, test = dataset.split(ts, 100, 50, seed=1)

pre = preprocess.fit_preprocessor(train, 0, preprocess.AveragingSpec(15, 32))
student, _ = nn.train_supervised(pre.features_for(train), train.states(0), nn.FNN_A,
                                 nn.TrainConfig(epochs=40, seed=3))

qnet = fxp.quantize_network(student, pre)
print("first-layer weight 0,0: float", student.weights[0][0, 0],
      "-> raw", qnet.weights[0][0, 0], "->", fxp.from_fx(qnet.weights[0][0, 0]))
print("shift exponents (I, Q, MF):", qnet.shift_k, " 1/W reciprocal raw:", qnet.reciprocal)

# Samples enter the datapath as Q16.16 once, outside the timed pipeline.
i_raw, q_raw = fxp.ingest(test, 0)
logit_raw, states, sats = fxp.fx_forward(qnet, i_raw, q_raw)

float_logits = nn.forward(student, pre.features_for(test))
rate, dev = agreement(float_logits > 0, states, float_logits, fxp.from_fx(logit_raw))
print(f"float vs fixed: agreement {rate:.4f} over {len(states)} records, "
      f"max logit gap {dev:.2e}, saturations {sats.sum()}")
print("fixed-point fidelity:", np.mean(states == test.states(0)))

# Saturating arithmetic in a few lines.
print("2 * 3 =", fxp.from_fx(fxp.fx_mul(fxp.to_fx(2.0), fxp.to_fx(3.0))))
print("30000 + 30000 saturates to", fxp.from_fx(fxp.fx_add(fxp.to_fx(3e4), fxp.to_fx(3e4))))
print("(-1 ulp) * (1 ulp) truncates to raw", fxp.fx_mul(-1, 1))

print()
print(latency.latency_report(qnet, clock_mhz=100).to_text())
