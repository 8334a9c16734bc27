"""
Synthetic multiplexed readout traces
====================================

Generates the five-qubit desk-scale trace set, looks at the mean
trajectories and checks how well a plain matched-filter threshold separates
the two states of each qubit.  Qubit 1 is the deliberately hard one: a weak
signal with strong crosstalk from its neighbours.
"""

import io

import numpy as np

from qreadout import dataset, preprocess
from qreadout.evaluation import mf_threshold_predictions

# A reduced trace count keeps this quick; the shipped config uses 700.
cfg = dataset.desk_config(traces_per_config=120)
ts = dataset.generate_synthetic(cfg)
print(f"{ts.n_traces} records, {ts.n_qubits} qubits, {ts.samples_per_channel} samples "
      f"per channel at {ts.sample_period_ns} ns")

# Every one of the 32 prepared-state configurations appears equally often.
print("records per configuration:", np.unique(np.bincount(ts.labels)))

# Noise-free mean trajectories: ring-up from the origin to the state centre.
means = cfg.mean_trajectories()
for q in range(ts.n_qubits):
    c0, c1 = means[q, 0, :, -1], means[q, 1, :, -1]
    print(f"qubit {q}: steady state |0> {np.round(c0, 3)}  |1> {np.round(c1, 3)}")

# Matched-filter threshold baseline per qubit.
train, test = dataset.split(ts, 80, 40, seed=0)
for q in range(ts.n_qubits):
    i, qq = train.channels(q)
    s = train.states(q)
    iq = np.stack([i, qq], axis=1)
    env = preprocess.train_mf_envelope(iq[s == 0], iq[s == 1])
    pred = mf_threshold_predictions(train, test, q, env)
    print(f"qubit {q}: MF-threshold fidelity {np.mean(pred == test.states(q)):.3f}")

# The binary trace format round-trips exactly.
buf = io.BytesIO()
dataset.save_traces(test, buf)
print(f"QTRC file: {len(buf.getvalue())} bytes, identical after reload:",
      dataset.load_traces(buf.getvalue()) == test)

# Shorter readout windows are plain prefixes of the stored traces.
for d in (1000, 550, 500):
    print(f"{d} ns -> {dataset.slice_duration(ts, d).samples_per_channel} samples")
