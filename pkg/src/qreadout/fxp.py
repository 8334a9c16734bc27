"""Bit-exact Q16.16 inference engine for the deployed student pipeline.

Values are carried as raw two's-complement integers (``value = raw / 2**16``)
in int64 numpy arrays whose contents always fit in 32 bits.  Every add,
multiply and left shift saturates at the 32-bit rails; the kernels report a
per-element saturation mask so callers can count clips.

Dataflow of :func:`fx_forward`::

    samples -> window sum (64-bit) * 1/W -> (x - x_min) >> k --+
    samples -> MF MAC (adder tree)      -> (x - x_min) >> k --+--> FC/ReLU x2 -> FC -> sign
"""

from dataclasses import dataclass

import numpy as np

from qreadout._binio import FormatError, Reader, le_bytes, pack, read_source, write_destination
from qreadout.nn import Network, NetworkSpec

FRAC_BITS = 16
ONE = 1 << FRAC_BITS
RAW_MIN = -(1 << 31)
RAW_MAX = (1 << 31) - 1
MAX_SHIFT = 15

MAGIC = b"QNNQ"
VERSION = 1


class SaturationCounter:
    """Accumulates the number of clipped results."""

    def __init__(self):
        self.count = 0

    def add(self, mask):
        self.count += int(np.count_nonzero(mask))


def _sat(x, counter=None):
    x = np.asarray(x, dtype=np.int64)
    hi, lo = x > RAW_MAX, x < RAW_MIN
    if counter is not None:
        counter.add(hi | lo)
    return np.clip(x, RAW_MIN, RAW_MAX)


def _out(r, scalar):
    return int(r) if scalar else r


def to_fx(x, counter=None):
    """Round to nearest (ties to even) and saturate."""
    scalar = np.ndim(x) == 0
    v = np.rint(np.asarray(x, dtype=np.float64) * ONE)
    over = (v > RAW_MAX) | (v < RAW_MIN)
    if counter is not None:
        counter.add(over)
    v = np.clip(v, RAW_MIN, RAW_MAX).astype(np.int64)
    return _out(v, scalar)


def from_fx(raw):
    """Exact conversion of raw Q16.16 to float."""
    scalar = np.ndim(raw) == 0
    v = np.asarray(raw, dtype=np.int64).astype(np.float64) / ONE
    return float(v) if scalar else v


def fx_add(a, b, counter=None):
    scalar = np.ndim(a) == 0 and np.ndim(b) == 0
    return _out(_sat(np.add(a, b, dtype=np.int64), counter), scalar)


def fx_sub(a, b, counter=None):
    scalar = np.ndim(a) == 0 and np.ndim(b) == 0
    return _out(_sat(np.subtract(a, b, dtype=np.int64), counter), scalar)


def fx_mul(a, b, counter=None, rounding="truncate"):
    """Exact 64-bit product shifted right by 16, then saturated.

    ``rounding="truncate"`` is a plain arithmetic shift (toward -inf);
    ``"nearest"`` adds half an ulp first.
    """
    scalar = np.ndim(a) == 0 and np.ndim(b) == 0
    p = np.multiply(a, b, dtype=np.int64)
    if rounding == "nearest":
        p = p + (1 << (FRAC_BITS - 1))
    elif rounding != "truncate":
        raise ValueError(f"unknown rounding {rounding!r}")
    return _out(_sat(p >> FRAC_BITS, counter), scalar)


def fx_shift(a, k, counter=None):
    """Arithmetic shift right by ``k`` (left, saturating, when ``k < 0``)."""
    scalar = np.ndim(a) == 0
    a = np.asarray(a, dtype=np.int64)
    r = a >> k if k >= 0 else _sat(a << -k, counter)
    return _out(r, scalar)


def tree_sum(terms, counter=None):
    """Saturating balanced binary reduction along the last axis.

    Level by level, neighbours ``(0,1), (2,3), ...`` are added; an odd last
    element passes through to the next level unchanged.
    """
    t = np.asarray(terms, dtype=np.int64)
    if t.shape[-1] == 0:
        return np.zeros(t.shape[:-1], dtype=np.int64)
    while t.shape[-1] > 1:
        n = t.shape[-1]
        paired = _sat(t[..., 0:n - 1:2] + t[..., 1:n:2], counter)
        t = np.concatenate([paired, t[..., n - 1:]], axis=-1) if n % 2 else paired
    return t[..., 0]


def _row_counter(n):
    """Counter that also tallies clips per record (leading axis)."""

    class _Rows(SaturationCounter):
        def __init__(self):
            super().__init__()
            self.rows = np.zeros(n, dtype=np.int64)

        def add(self, mask):
            mask = np.asarray(mask)
            super().add(mask)
            if mask.ndim and mask.shape[0] == n:
                self.rows += mask.reshape(n, -1).sum(axis=1)

    return _Rows()


@dataclass(frozen=True)
class QuantNetwork:
    """Quantized student plus quantized preprocessing constants (all raw Q16.16)."""

    spec: NetworkSpec
    weights: tuple
    biases: tuple
    x_min: tuple        # raw, per stream I, Q, MF
    shift_k: tuple
    env_i: np.ndarray
    env_q: np.ndarray
    reciprocal: int     # raw round(2**16 / W)
    window: int
    groups: int
    n_samples: int

    def __post_init__(self):
        if self.spec.input_dim != 2 * self.groups + 1:
            raise ValueError(f"input_dim {self.spec.input_dim} != 2 * {self.groups} + 1")
        for w, b, shape in zip(self.weights, self.biases, self.spec.layer_shapes):
            if w.shape != shape or b.shape != shape[:1]:
                raise ValueError("layer shapes do not match spec")
        if any(abs(k) > MAX_SHIFT for k in self.shift_k):
            raise ValueError(f"shift_k {self.shift_k} outside [-{MAX_SHIFT}, {MAX_SHIFT}]")
        if len(self.env_i) != self.n_samples or len(self.env_q) != self.n_samples:
            raise ValueError("envelope length != n_samples")
        if self.window * self.groups > self.n_samples:
            raise ValueError("averaging windows exceed the trace")

    def __eq__(self, other):
        if not isinstance(other, QuantNetwork):
            return NotImplemented
        return (self.spec == other.spec
                and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
                and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
                and tuple(self.x_min) == tuple(other.x_min)
                and tuple(self.shift_k) == tuple(other.shift_k)
                and np.array_equal(self.env_i, other.env_i)
                and np.array_equal(self.env_q, other.env_q)
                and (self.reciprocal, self.window, self.groups, self.n_samples)
                == (other.reciprocal, other.window, other.groups, other.n_samples))

    __hash__ = None


def quantize_network(net: Network, pre) -> QuantNetwork:
    """Convert a float student and its :class:`~qreadout.preprocess.Preprocessor`.

    Raises ``ValueError`` listing every constant outside the Q16.16 range.
    """
    lim = (RAW_MAX + 0.5) / ONE
    named = [(f"layer{k}.weight", w) for k, w in enumerate(net.weights)]
    named += [(f"layer{k}.bias", b) for k, b in enumerate(net.biases)]
    named += [(f"x_min[{s}]", st.x_min) for s, st in zip("IQM", pre.stats)]
    named += [("envelope.I", pre.envelope.e_i), ("envelope.Q", pre.envelope.e_q)]
    bad = [name for name, v in named
           if not np.all(np.isfinite(v)) or np.any(np.abs(np.asarray(v)) >= lim)]
    if bad:
        raise ValueError(f"constants outside the Q16.16 range: {', '.join(bad)}")
    return QuantNetwork(
        spec=net.spec,
        weights=tuple(to_fx(w) for w in net.weights),
        biases=tuple(to_fx(b) for b in net.biases),
        x_min=tuple(to_fx(s.x_min) for s in pre.stats),
        shift_k=tuple(int(s.shift_k) for s in pre.stats),
        env_i=to_fx(pre.envelope.e_i),
        env_q=to_fx(pre.envelope.e_q),
        reciprocal=int(round(ONE / pre.window)),
        window=pre.window, groups=pre.groups, n_samples=pre.n_samples,
    )


def ingest(ts, qubit):
    """ADC codes of one qubit as raw Q16.16 I and Q arrays, each ``(n, S)``."""
    c = SaturationCounter()
    iq = to_fx(ts.codes[:, qubit].astype(np.float64) * ts.adc_scale, c)
    if c.count:
        raise ValueError(f"{c.count} samples exceed the Q16.16 range at ingestion")
    return iq[:, 0], iq[:, 1]


def fx_features(qnet: QuantNetwork, i_raw, q_raw, counter=None, rounding="truncate"):
    """Raw Q16.16 feature matrix ``(n, 2G+1)``."""
    n = len(i_raw)
    W, G = qnet.window, qnet.groups
    cols = []
    for ch, raw in enumerate((i_raw, q_raw)):
        sums = raw[:, :G * W].reshape(n, G, W).sum(axis=-1)     # exact in 64 bits
        avg = fx_mul(sums, qnet.reciprocal, counter, rounding)
        cols.append(fx_shift(fx_sub(avg, qnet.x_min[ch], counter), qnet.shift_k[ch], counter))
    prods = np.concatenate([fx_mul(i_raw, qnet.env_i, counter, rounding),
                            fx_mul(q_raw, qnet.env_q, counter, rounding)], axis=1)
    mf = tree_sum(prods, counter)
    cols.append(fx_shift(fx_sub(mf, qnet.x_min[2], counter), qnet.shift_k[2], counter)[:, None])
    return np.concatenate(cols, axis=1)


def fx_dense(x, w, b, counter=None, rounding="truncate"):
    """One FC layer: per-neuron products and bias reduced by the adder tree."""
    prods = fx_mul(x[:, None, :], w[None, :, :], counter, rounding)           # (n, out, in)
    bias = np.broadcast_to(b, (len(x), len(b)))[..., None]
    return tree_sum(np.concatenate([prods, bias], axis=-1), counter)


def fx_relu(z):
    """Zero when the sign bit is set; positive overflow is already clipped."""
    return np.where(z < 0, 0, z)


def fx_network(qnet: QuantNetwork, feats, counter=None, rounding="truncate"):
    a = feats
    last = len(qnet.weights) - 1
    for k, (w, b) in enumerate(zip(qnet.weights, qnet.biases)):
        z = fx_dense(a, w, b, counter, rounding)
        a = z if k == last else fx_relu(z)
    return a[:, 0]


def fx_forward(qnet: QuantNetwork, i_raw, q_raw, chunk=512, rounding="truncate"):
    """Run the integer pipeline on raw Q16.16 traces.

    Returns ``(logits_raw, states, saturation_counts)``, one entry per record.
    A logit of exactly zero classifies as ground.
    """
    i_raw = np.atleast_2d(np.asarray(i_raw, dtype=np.int64))
    q_raw = np.atleast_2d(np.asarray(q_raw, dtype=np.int64))
    if i_raw.shape[-1] != qnet.n_samples or q_raw.shape != i_raw.shape:
        raise ValueError(f"trace shape {i_raw.shape} does not match {qnet.n_samples} samples")
    logits, sats = [], []
    for k in range(0, len(i_raw), chunk):
        ib, qb = i_raw[k:k + chunk], q_raw[k:k + chunk]
        c = _row_counter(len(ib))
        feats = fx_features(qnet, ib, qb, c, rounding)
        logits.append(fx_network(qnet, feats, c, rounding))
        sats.append(c.rows)
    if not logits:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, empty
    logit = np.concatenate(logits)
    return logit, (logit > 0).astype(np.int64), np.concatenate(sats)


def save_quant(qnet: QuantNetwork, destination):
    dims = qnet.spec.dims
    out = [MAGIC, pack("<HH", VERSION, len(dims) - 1), le_bytes(dims, "u4")]
    out += [le_bytes(w, "i4") for w in qnet.weights]
    out += [le_bytes(b, "i4") for b in qnet.biases]
    out += [le_bytes(qnet.x_min, "i4"), le_bytes(qnet.shift_k, "i4"),
            le_bytes(qnet.env_i, "i4"), le_bytes(qnet.env_q, "i4"),
            le_bytes([qnet.reciprocal, qnet.window, qnet.groups, qnet.n_samples], "i4")]
    write_destination(destination, b"".join(out))


def load_quant(source) -> QuantNetwork:
    r = Reader(read_source(source))
    r.magic(MAGIC)
    r.version(VERSION)
    n_layers = r.scalar("<H", "n_layers")
    spec_at = r.pos
    dims = [int(d) for d in r.array("u4", n_layers + 1, "layer dims")]
    try:
        spec = NetworkSpec(dims[0], tuple(dims[1:-1]), dims[-1])
    except (ValueError, IndexError) as exc:
        raise FormatError(f"invalid spec block: {exc}", spec_at) from exc
    shapes = spec.layer_shapes
    ws = [r.array("i4", o * i, f"layer {k} weights").astype(np.int64).reshape(o, i)
          for k, (o, i) in enumerate(shapes)]
    bs = [r.array("i4", o, f"layer {k} bias").astype(np.int64) for k, (o, _) in enumerate(shapes)]
    x_min = tuple(int(v) for v in r.array("i4", 3, "x_min"))
    shift_k = tuple(int(v) for v in r.array("i4", 3, "shift_k"))
    if r.remaining < 16 or (r.remaining - 16) % 8:
        raise FormatError(f"cannot split {r.remaining} trailing bytes into envelope + footer", r.pos)
    n = (r.remaining - 16) // 8
    env_i = r.array("i4", n, "envelope I").astype(np.int64)
    env_q = r.array("i4", n, "envelope Q").astype(np.int64)
    foot_at = r.pos
    recip, window, groups, n_samples = (int(v) for v in r.array("i4", 4, "footer"))
    r.finish()
    if n_samples != n:
        raise FormatError(f"footer S={n_samples} disagrees with envelope length {n}", foot_at)
    try:
        return QuantNetwork(spec, tuple(ws), tuple(bs), x_min, shift_k, env_i, env_q,
                            recip, window, groups, n_samples)
    except ValueError as exc:
        raise FormatError(str(exc), foot_at) from exc
