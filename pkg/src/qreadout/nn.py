"""Feed-forward ReLU networks with a single-logit head, trained from scratch in numpy."""

import logging
from dataclasses import dataclass, field

import numpy as np

from qreadout._binio import FormatError, Reader, le_bytes, pack, read_source, write_destination

log = logging.getLogger(__name__)

MAGIC = b"QNNF"
VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_dims: tuple = ()
    output_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.output_dim != 1:
            raise ValueError("only single-logit heads are supported")
        if min((self.input_dim, *self.hidden_dims)) < 1:
            raise ValueError("all layer widths must be >= 1")

    @property
    def dims(self) -> tuple:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def layer_shapes(self) -> list:
        d = self.dims
        return [(d[k + 1], d[k]) for k in range(len(d) - 1)]


TEACHER = NetworkSpec(1000, (1000, 500, 250))
FNN_A = NetworkSpec(31, (16, 8))
FNN_B = NetworkSpec(201, (16, 8))


def param_count(spec: NetworkSpec) -> int:
    """Weights plus biases, ``sum((in + 1) * out)`` over layers."""
    return sum((n_in + 1) * n_out for n_out, n_in in spec.layer_shapes)


@dataclass(frozen=True)
class Network:
    spec: NetworkSpec
    weights: tuple
    biases: tuple

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(np.asarray(w) for w in self.weights))
        object.__setattr__(self, "biases", tuple(np.asarray(b) for b in self.biases))
        for (w, b), shape in zip(zip(self.weights, self.biases), self.spec.layer_shapes,
                                 strict=True):
            if w.shape != shape or b.shape != shape[:1]:
                raise ValueError(f"layer shape {w.shape}/{b.shape} != {shape}")

    @property
    def params(self) -> list:
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def astype(self, dtype) -> "Network":
        return Network(self.spec, tuple(w.astype(dtype) for w in self.weights),
                       tuple(b.astype(dtype) for b in self.biases))

    def copy(self) -> "Network":
        return self.astype(self.weights[0].dtype)


def init_network(spec: NetworkSpec, seed: int, dtype=np.float64) -> Network:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.Generator(np.random.PCG64(seed))
    ws, bs = [], []
    for n_out, n_in in spec.layer_shapes:
        bound = np.sqrt(6.0 / (n_in + n_out))
        ws.append(rng.uniform(-bound, bound, size=(n_out, n_in)).astype(dtype))
        bs.append(np.zeros(n_out, dtype=dtype))
    return Network(spec, tuple(ws), tuple(bs))


def forward(net: Network, x, return_cache=False):
    """Logits for a batch ``(n, input_dim)`` or a single input vector.

    With ``return_cache`` also returns the layer inputs and pre-activations
    that :func:`backward` needs.
    """
    x = np.asarray(x)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[-1] != net.spec.input_dim:
        raise ValueError(f"input width {a.shape[-1]} != {net.spec.input_dim}")
    inputs, pre = [], []
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(a)
        z = a @ w.T + b
        pre.append(z)
        a = z if k == last else np.maximum(z, 0)
    logits = a[:, 0]
    if single:
        logits = logits[0]
    if return_cache:
        return logits, (inputs, pre)
    return logits


def backward(net: Network, cache, dlogits) -> list:
    """Gradients ``[dW0, db0, dW1, db1, ...]`` given ``dL/dlogit`` per sample."""
    inputs, pre = cache
    delta = np.asarray(dlogits, dtype=pre[-1].dtype).reshape(-1, 1)
    grads = []
    for k in range(len(net.weights) - 1, -1, -1):
        if k != len(net.weights) - 1:
            delta = delta * (pre[k] > 0)
        grads.append(delta.sum(axis=0))
        grads.append(delta.T @ inputs[k])
        if k:
            delta = delta @ net.weights[k]
    return grads[::-1]


def predict(net: Network, x) -> np.ndarray:
    """State 1 iff logit > 0."""
    return (forward(net, x) > 0).astype(np.int64)


def bce_with_logits(z, y):
    """Per-sample binary cross-entropy of ``sigmoid(z)`` against ``y`` (stable form)."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e))


def bce_loss(labels):
    """Loss function for :func:`fit`: mean BCE and its gradient w.r.t. the logits."""
    labels = np.asarray(labels, dtype=np.float64)

    def loss(z, idx):
        y = labels[idx]
        return bce_with_logits(z, y).mean(), (sigmoid(z) - y) / len(idx)

    return loss


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 256
    seed: int = 0
    optimizer: str = "adam"
    dtype: str = "float64"
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("learning_rate > 0, epochs >= 1 and batch_size >= 1 required")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


@dataclass
class History:
    epoch_loss: list = field(default_factory=list)


def fit(net: Network, x, loss_fn, cfg: TrainConfig, callback=None):
    """Mini-batch training of a copy of ``net``; returns ``(trained, history)``.

    ``loss_fn(logits, idx)`` returns the mean batch loss and ``dL/dlogit`` for
    the records ``idx``.  ``callback(epoch, net)`` runs after each epoch.
    """
    dtype = np.dtype(cfg.dtype)
    net = net.astype(dtype)
    x = np.asarray(x, dtype=dtype)
    params = net.params
    opt = _Adam(params, cfg.learning_rate) if cfg.optimizer == "adam" else _SGD(params, cfg.learning_rate)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    hist = History()
    n = len(x)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            z, cache = forward(net, x[idx], return_cache=True)
            loss, dz = loss_fn(z, idx)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss {loss} at epoch {epoch}, batch {b}")
            grads = backward(net, cache, dz)
            if cfg.weight_decay:
                for k in range(0, len(grads), 2):
                    grads[k] = grads[k] + cfg.weight_decay * params[k]
            opt.step(params, [g.astype(dtype, copy=False) for g in grads])
            total += float(loss) * len(idx)
        hist.epoch_loss.append(total / n)
        log.debug("epoch %d loss %.6f", epoch, hist.epoch_loss[-1])
        if callback is not None:
            callback(epoch, net)
    return net, hist


def train_supervised(x, labels, spec: NetworkSpec, cfg: TrainConfig, callback=None):
    init = init_network(spec, cfg.seed)
    return fit(init, x, bce_loss(labels), cfg, callback)


def standardization(x):
    """Per-dimension mean and (zero-safe) standard deviation."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    return mu, np.where(sd > 0, sd, 1.0)


def fold_standardization(net: Network, mu, sd) -> Network:
    """Absorb ``(x - mu) / sd`` into the first layer so the net takes raw inputs."""
    w0 = net.weights[0].astype(np.float64) / sd
    b0 = net.biases[0].astype(np.float64) - w0 @ mu
    rest_w = tuple(w.astype(np.float64) for w in net.weights[1:])
    rest_b = tuple(b.astype(np.float64) for b in net.biases[1:])
    return Network(net.spec, (w0, *rest_w), (b0, *rest_b))


def train_teacher(raw, labels, spec: NetworkSpec, cfg: TrainConfig, callback=None):
    """Train on standardized flattened raw traces; the returned net accepts raw inputs."""
    raw = np.asarray(raw)
    mu, sd = standardization(raw)
    dtype = np.dtype(cfg.dtype)
    xs = ((raw - mu) / sd).astype(dtype)
    net, hist = train_supervised(xs, labels, spec, cfg, callback)
    return fold_standardization(net, mu, sd), hist


def save_network(net: Network, destination):
    out = [MAGIC, pack("<HH", VERSION, len(net.weights))]
    for w, b in zip(net.weights, net.biases):
        out.append(pack("<II", w.shape[1], w.shape[0]))
        out.append(le_bytes(w, "f8"))
        out.append(le_bytes(b, "f8"))
    write_destination(destination, b"".join(out))


def load_network(source) -> Network:
    r = Reader(read_source(source))
    r.magic(MAGIC)
    r.version(VERSION)
    n_layers = r.scalar("<H", "n_layers")
    ws, bs, dims = [], [], []
    for k in range(n_layers):
        start = r.pos
        n_in, n_out = r.scalar("<I", "in"), r.scalar("<I", "out")
        if dims and n_in != dims[-1]:
            raise FormatError(f"layer {k} input width {n_in} != previous output {dims[-1]}", start)
        if not dims:
            dims.append(n_in)
        dims.append(n_out)
        ws.append(r.array("f8", n_in * n_out, f"layer {k} weights").reshape(n_out, n_in))
        bs.append(r.array("f8", n_out, f"layer {k} bias"))
    r.finish()
    try:
        spec = NetworkSpec(dims[0], tuple(dims[1:-1]), dims[-1])
    except (ValueError, IndexError) as exc:
        raise FormatError(f"invalid layer stack: {exc}", 8) from exc
    return Network(spec, tuple(ws), tuple(bs))
