"""Fidelity metrics, duration sweeps, compression and float/fixed agreement reports."""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from qreadout import nn
from qreadout.dataset import slice_duration
from qreadout.preprocess import apply_mf

# published figures echoed next to our own arithmetic
PUBLISHED_NCR = 0.9989
PUBLISHED_NCR_VS_BASELINE = 0.9893
BASELINE_PARAMS = 1_627_001


def assignment_fidelity(predictions, labels):
    """Fraction of correct assignments and the confusion counts.

    ``confusion["n01"]`` counts records prepared in 0 and assigned 1.
    """
    p = np.asarray(predictions).astype(np.int64).ravel()
    y = np.asarray(labels).astype(np.int64).ravel()
    if len(p) != len(y):
        raise ValueError(f"{len(p)} predictions for {len(y)} labels")
    if len(p) == 0:
        raise ValueError("empty evaluation set")
    conf = {f"n{a}{b}": int(np.count_nonzero((y == a) & (p == b))) for a in (0, 1) for b in (0, 1)}
    return float(np.mean(p == y)), conf


def geometric_mean(fidelities) -> float:
    f = np.asarray(fidelities, dtype=np.float64).ravel()
    if f.size == 0:
        raise ValueError("no fidelities given")
    if np.any((f < 0) | (f > 1)) or not np.all(np.isfinite(f)):
        raise ValueError("fidelities must lie in [0, 1]")
    if np.any(f == 0):
        return 0.0
    return float(np.exp(np.mean(np.log(f))))


def binomial_stderr(p: float, n: int) -> float:
    return math.sqrt(p * (1 - p) / n) if n else float("nan")


@dataclass
class QubitFidelity:
    qubit: int
    fidelity: float
    n: int
    confusion: dict
    stderr: float = 0.0


@dataclass
class FidelityReport:
    qubits: list

    @classmethod
    def from_predictions(cls, predictions: dict, labels: dict):
        rows = []
        for q in sorted(predictions):
            f, conf = assignment_fidelity(predictions[q], labels[q])
            n = len(labels[q])
            rows.append(QubitFidelity(q, f, n, conf, binomial_stderr(f, n)))
        return cls(rows)

    @property
    def fidelities(self) -> dict:
        return {r.qubit: r.fidelity for r in self.qubits}

    def f_gm(self, subset=None) -> float:
        f = self.fidelities
        keys = sorted(f) if subset is None else subset
        return geometric_mean([f[q] for q in keys])

    def to_dict(self) -> dict:
        return {"qubits": [asdict(r) for r in self.qubits], "f_gm": self.f_gm()}


def mf_threshold_predictions(train, test, qubit, envelope):
    """Matched-filter scalar thresholded halfway between the training class means.

    The ground class sits on the positive side of the envelope by construction.
    """
    s = train.states(qubit)
    m = apply_mf(envelope, *train.channels(qubit))
    thr = 0.5 * (m[s == 0].mean() + m[s == 1].mean())
    return (apply_mf(envelope, *test.channels(qubit)) < thr).astype(np.int64)


@dataclass
class CompressionReport:
    teacher_params_total: int
    student_params_total: int
    ncr: float
    breakdown: dict = field(default_factory=dict)
    baseline_params: int = BASELINE_PARAMS
    ncr_vs_baseline: float = 0.0
    published_ncr: float = PUBLISHED_NCR
    published_ncr_vs_baseline: float = PUBLISHED_NCR_VS_BASELINE
    note: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CompressionReport":
        return cls(**json.loads(text))


def _spec_name(spec: nn.NetworkSpec) -> str:
    return "-".join(str(d) for d in spec.dims)


def compression_report(teacher_specs, student_specs, baseline_params=BASELINE_PARAMS):
    """Network compression rate ``1 - student_params / teacher_params``."""
    breakdown = {}
    for role, specs in (("teacher", teacher_specs), ("student", student_specs)):
        for spec in specs:
            key = f"{role}:{_spec_name(spec)}"
            entry = breakdown.setdefault(key, {"params_each": nn.param_count(spec), "count": 0})
            entry["count"] += 1
    t = sum(nn.param_count(s) for s in teacher_specs)
    s = sum(nn.param_count(s) for s in student_specs)
    if t <= 0:
        raise ValueError("teacher parameter total must be positive")
    vs_base = 1 - s / baseline_params
    return CompressionReport(
        t, s, 1 - s / t, breakdown, baseline_params, vs_base,
        note=(f"student total vs a single {baseline_params:,}-parameter baseline gives "
              f"{vs_base:.4%}; the published {PUBLISHED_NCR_VS_BASELINE:.2%} is not reproduced "
              "by any parameter counting identified here"))


def agreement(float_preds, fx_preds, float_logits, fx_logits):
    """Fraction of identical classifications and the largest logit gap."""
    a, b = np.asarray(float_preds), np.asarray(fx_preds)
    la, lb = np.asarray(float_logits, dtype=np.float64), np.asarray(fx_logits, dtype=np.float64)
    if not len(a) == len(b) == len(la) == len(lb):
        raise ValueError("prediction and logit arrays must have equal lengths")
    if len(a) == 0:
        raise ValueError("empty comparison")
    return float(np.mean(a == b)), float(np.max(np.abs(la - lb)))


@dataclass
class SweepReport:
    durations: list
    fidelity: dict          # duration -> {qubit: fidelity}

    @property
    def qubits(self) -> list:
        return sorted(next(iter(self.fidelity.values())))

    def best_per_qubit(self) -> dict:
        return {q: max(self.durations, key=lambda d: (self.fidelity[d][q], d))
                for q in self.qubits}

    def best_composite(self) -> float:
        best = self.best_per_qubit()
        return geometric_mean([self.fidelity[best[q]][q] for q in self.qubits])

    def composite(self, duration) -> float:
        return geometric_mean([self.fidelity[duration][q] for q in self.qubits])

    def to_dict(self) -> dict:
        return {
            "durations_ns": self.durations,
            "fidelity": {str(d): {str(q): f for q, f in row.items()}
                         for d, row in self.fidelity.items()},
            "f_gm": {str(d): self.composite(d) for d in self.durations},
            "best_duration_per_qubit": {str(q): d for q, d in self.best_per_qubit().items()},
            "best_composite": self.best_composite(),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["duration_ns", "qubit", "fidelity"])
        for d in self.durations:
            for q in self.qubits:
                w.writerow([d, q, repr(self.fidelity[d][q])])
        return buf.getvalue()


def sweep_durations(bundles, test, durations, qubits=None) -> SweepReport:
    """Evaluate float students on the test set cut to every duration.

    Args:
        bundles: mapping ``(duration_ns, qubit) -> (Preprocessor, Network)``.
        test: full-length test TraceSet.
        durations: durations in ns, evaluated in ascending order.
    """
    durations = sorted(durations)
    qubits = range(test.n_qubits) if qubits is None else qubits
    grid = {}
    for d in durations:
        cut = slice_duration(test, d)
        row = {}
        for q in qubits:
            if (d, q) not in bundles:
                raise KeyError(f"no trained student for qubit {q} at {d} ns")
            pre, net = bundles[(d, q)]
            row[q] = assignment_fidelity(nn.predict(net, pre.features_for(cut)), cut.states(q))[0]
        grid[d] = row
    return SweepReport(durations, grid)


def _lookup(tree, dotted):
    node = tree
    for part in dotted.split("."):
        if isinstance(node, dict) and part in node:
            node = node[part]
        elif isinstance(node, list) and part.isdigit() and int(part) < len(node):
            node = node[int(part)]
        else:
            raise KeyError(dotted)
    return node


def check_expectations(summary: dict, expectations: dict) -> list:
    """Violations of ``{"dotted.key": {"min": .., "max": .., "equals": ..}}`` bounds."""
    problems = []
    for key, bound in expectations.items():
        try:
            value = _lookup(summary, key)
        except KeyError:
            problems.append(f"{key}: missing from summary")
            continue
        if "equals" in bound and value != bound["equals"]:
            problems.append(f"{key}: {value!r} != {bound['equals']!r}")
        if "min" in bound and not value >= bound["min"]:
            problems.append(f"{key}: {value!r} < {bound['min']!r}")
        if "max" in bound and not value <= bound["max"]:
            problems.append(f"{key}: {value!r} > {bound['max']!r}")
    return problems
