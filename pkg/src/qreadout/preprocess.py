"""Student input features: windowed averages, shift normalization, matched filter.

The feature vector of one record is::

    [norm(avg I) (G values) || norm(avg Q) (G values) || norm(MF scalar)]

with one :class:`NormStats` per stream (I, Q, MF) of a qubit.
"""

import math
from dataclasses import dataclass

import numpy as np

from qreadout._binio import Reader, le_bytes, pack, read_source, write_destination

MAGIC = b"QPRE"
VERSION = 1
MF_EPS = 1e-12
STREAMS = ("I", "Q", "MF")


@dataclass(frozen=True)
class AveragingSpec:
    groups: int
    window: int | None = None

    def __post_init__(self):
        if self.groups < 1 or (self.window is not None and self.window < 1):
            raise ValueError("groups and window must be >= 1")

    def window_size(self, n_samples: int) -> int:
        if n_samples < self.groups:
            raise ValueError(f"{n_samples} samples cannot fill {self.groups} groups")
        w = self.window if self.window is not None else n_samples // self.groups
        if w * self.groups > n_samples:
            raise ValueError(f"window {w} x {self.groups} groups exceeds {n_samples} samples")
        return w


def average_windows(channel, spec: AveragingSpec) -> np.ndarray:
    """Mean over consecutive windows along the last axis; the tail remainder is dropped."""
    channel = np.asarray(channel, dtype=np.float64)
    w = spec.window_size(channel.shape[-1])
    used = channel[..., :w * spec.groups]
    return used.reshape(*channel.shape[:-1], spec.groups, w).mean(axis=-1)


@dataclass(frozen=True)
class NormStats:
    x_min: float
    sigma: float
    shift_k: int


def nearest_pow2_exponent(sigma: float) -> int:
    """``round(log2(sigma))`` with exact halves rounded toward +inf."""
    return int(math.floor(math.log2(sigma) + 0.5))


def fit_norm_stats(values) -> NormStats:
    """Minimum and population standard deviation of a training stream."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("empty training stream")
    sigma = float(v.std())
    if not sigma > 0:
        raise ValueError("degenerate training stream (zero variance)")
    return NormStats(float(v.min()), sigma, nearest_pow2_exponent(sigma))


def normalize(x, stats: NormStats, exact: bool = False):
    """``(x - x_min) / sigma`` when ``exact``, else divide by ``2**shift_k`` like the shifter."""
    div = stats.sigma if exact else math.ldexp(1.0, stats.shift_k)
    return (np.asarray(x, dtype=np.float64) - stats.x_min) / div


@dataclass(frozen=True)
class MFEnvelope:
    e_i: np.ndarray
    e_q: np.ndarray

    @property
    def n_samples(self) -> int:
        return len(self.e_i)


def train_mf_envelope(traces0, traces1) -> MFEnvelope:
    """Per-sample ``(mean0 - mean1) / (var0 + var1 + eps)`` for both channels.

    Args:
        traces0: ground-state traces, shape ``(n0, 2, S)`` (channel 0 = I).
        traces1: excited-state traces, shape ``(n1, 2, S)``.
    """
    t0 = np.asarray(traces0, dtype=np.float64)
    t1 = np.asarray(traces1, dtype=np.float64)
    if t0.ndim != 3 or t1.ndim != 3 or t0.shape[1:] != t1.shape[1:] or t0.shape[1] != 2:
        raise ValueError(f"trace shapes {t0.shape} and {t1.shape} do not match (n, 2, S)")
    if len(t0) < 2 or len(t1) < 2:
        raise ValueError("need at least two traces per class")
    env = (t0.mean(0) - t1.mean(0)) / (t0.var(0) + t1.var(0) + MF_EPS)
    return MFEnvelope(env[0], env[1])


def apply_mf(env: MFEnvelope, i, q):
    """Dot product of the envelope with the raw I and Q samples (vectorized over records)."""
    i = np.asarray(i, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if i.shape[-1] != env.n_samples or q.shape[-1] != env.n_samples:
        raise ValueError(f"trace length {i.shape[-1]} != envelope length {env.n_samples}")
    return i @ env.e_i + q @ env.e_q


@dataclass(frozen=True)
class Preprocessor:
    """Trained per-qubit preprocessing constants for one trace duration."""

    qubit: int
    groups: int
    window: int
    n_samples: int
    stats: tuple  # NormStats for I, Q, MF
    envelope: MFEnvelope

    @property
    def averaging(self) -> AveragingSpec:
        return AveragingSpec(self.groups, self.window)

    @property
    def n_features(self) -> int:
        return 2 * self.groups + 1

    def features(self, i, q, exact=False, include_mf=True) -> np.ndarray:
        """Feature matrix ``(n, 2G+1)`` (or ``(n, 2G)`` without the MF column)."""
        i = np.atleast_2d(i)
        q = np.atleast_2d(q)
        if i.shape[-1] != self.n_samples:
            raise ValueError(f"trace length {i.shape[-1]} != fitted length {self.n_samples}")
        avg = self.averaging
        cols = [normalize(average_windows(i, avg), self.stats[0], exact),
                normalize(average_windows(q, avg), self.stats[1], exact)]
        if include_mf:
            mf = apply_mf(self.envelope, i, q)
            cols.append(normalize(mf, self.stats[2], exact)[:, None])
        return np.concatenate(cols, axis=1)

    def features_for(self, ts, exact=False, include_mf=True) -> np.ndarray:
        return self.features(*ts.channels(self.qubit), exact=exact, include_mf=include_mf)


def fit_preprocessor(train, qubit: int, spec: AveragingSpec) -> Preprocessor:
    """Fit envelope and the I/Q/MF normalization streams on a training TraceSet."""
    i, q = train.channels(qubit)
    states = train.states(qubit)
    iq = np.stack([i, q], axis=1)
    env = train_mf_envelope(iq[states == 0], iq[states == 1])
    w = spec.window_size(train.samples_per_channel)
    stats = (fit_norm_stats(average_windows(i, spec)),
             fit_norm_stats(average_windows(q, spec)),
             fit_norm_stats(apply_mf(env, i, q)))
    return Preprocessor(qubit, spec.groups, w, train.samples_per_channel, stats, env)


def build_feature_vector(record_i, record_q, pre: Preprocessor, exact=False) -> np.ndarray:
    """Feature vector of a single record."""
    return pre.features(record_i, record_q, exact=exact)[0]


def save_preprocessor(pre: Preprocessor, destination):
    out = [MAGIC, pack("<HHIII", VERSION, pre.qubit, pre.groups, pre.window, pre.n_samples)]
    for s in pre.stats:
        out.append(pack("<ddi", s.x_min, s.sigma, s.shift_k))
    out.append(le_bytes(pre.envelope.e_i, "f8"))
    out.append(le_bytes(pre.envelope.e_q, "f8"))
    write_destination(destination, b"".join(out))


def load_preprocessor(source) -> Preprocessor:
    r = Reader(read_source(source))
    r.magic(MAGIC)
    r.version(VERSION)
    qubit = r.scalar("<H", "qubit_id")
    groups, window, n = (r.scalar("<I", name) for name in ("G", "W", "S"))
    stats = tuple(NormStats(r.scalar("<d", "x_min"), r.scalar("<d", "sigma"),
                            r.scalar("<i", "shift_k")) for _ in STREAMS)
    e_i = r.array("f8", n, "envelope I")
    e_q = r.array("f8", n, "envelope Q")
    r.finish()
    return Preprocessor(qubit, groups, window, n, stats, MFEnvelope(e_i, e_q))
