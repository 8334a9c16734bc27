"""
Averaged I/Q features and the matched-filter scalar
===================================================

Builds the compact student inputs: windowed averages of I and Q plus one
matched-filter scalar, each normalized with a power-of-two divisor so the
fixed-point datapath can use a shift instead of a division.
"""

import numpy as np

from qreadout import dataset, preprocess
from qreadout.preprocess import AveragingSpec

ts = dataset.generate_synthetic(dataset.desk_config(traces_per_config=60))

# FNN-A inputs: 15 windows of 32 samples per channel (the last 20 samples are dropped).
fnn_a = AveragingSpec(groups=15, window=32)
# FNN-B inputs: 100 windows, W = floor(S / 100) = 5 samples at 1 us.
fnn_b = AveragingSpec(groups=100)
print("window sizes at 500 samples:", fnn_a.window_size(500), fnn_b.window_size(500))

pre = preprocess.fit_preprocessor(ts, qubit=0, spec=fnn_a)
for name, st in zip(("I", "Q", "MF"), pre.stats):
    print(f"{name:>2}: x_min {st.x_min:+.4f}  sigma {st.sigma:.4f}  "
          f"-> divisor 2^{st.shift_k} = {2.0 ** st.shift_k:g}")

x = pre.features_for(ts)
print("feature matrix", x.shape, "(31 columns: 15 I, 15 Q, 1 MF)")

# The MF scalar alone already separates the states; ground lands on the positive side.
mf = x[:, -1]
s = ts.states(0)
print(f"normalized MF scalar: mean |0> {mf[s == 0].mean():.3f}, mean |1> {mf[s == 1].mean():.3f}")

# Hardware-mode (shift) and exact normalization agree up to the divisor ratio.
exact = pre.features_for(ts, exact=True)
ratio = 2.0 ** np.array([st.shift_k for st in pre.stats]) / np.array([st.sigma for st in pre.stats])
print("exact / shift scale per stream:", np.round(ratio, 3))
print("max column error after rescaling:",
      np.abs(x[:, -1] - exact[:, -1] / ratio[2]).max())

# After slicing to 550 ns the preprocessing is refit with W = floor(275 / 100) = 2.
cut = dataset.slice_duration(ts, 550)
pre_b = preprocess.fit_preprocessor(cut, qubit=1, spec=fnn_b)
print("550 ns FNN-B features:", pre_b.features_for(cut).shape, "window", pre_b.window)
