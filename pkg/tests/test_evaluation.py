import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qreadout import dataset, evaluation, nn, preprocess
from qreadout.evaluation import CompressionReport
from qreadout.nn import FNN_A, FNN_B, TEACHER

PUBLISHED_ROW = [0.968, 0.748, 0.929, 0.934, 0.959]


def test_assignment_fidelity_examples():
    y = np.array([0, 1, 1, 0])
    assert evaluation.assignment_fidelity(y, y)[0] == 1.0
    assert evaluation.assignment_fidelity(1 - y, y)[0] == 0.0
    f, conf = evaluation.assignment_fidelity([0, 1, 0, 0], y)
    assert f == 0.75
    assert conf == {"n00": 2, "n01": 0, "n10": 1, "n11": 1}
    with pytest.raises(ValueError):
        evaluation.assignment_fidelity([], [])
    with pytest.raises(ValueError):
        evaluation.assignment_fidelity([0, 1], [0])


def test_geometric_mean_published_row():
    assert round(evaluation.geometric_mean(PUBLISHED_ROW), 3) == 0.904
    four = [f for i, f in enumerate(PUBLISHED_ROW) if i != 1]
    assert round(evaluation.geometric_mean(four), 3) == 0.947
    assert evaluation.geometric_mean([0.9] * 7) == pytest.approx(0.9, abs=1e-15)
    assert evaluation.geometric_mean([0.9, 0.0]) == 0.0
    with pytest.raises(ValueError):
        evaluation.geometric_mean([0.5, 1.2])
    with pytest.raises(ValueError):
        evaluation.geometric_mean([])


def test_geometric_mean_large_n_no_underflow():
    assert evaluation.geometric_mean([1e-3] * 2000) == pytest.approx(1e-3)


fids = st.lists(st.floats(0.01, 1.0), min_size=1, max_size=12)


@settings(max_examples=200, deadline=None)
@given(f=fids)
def test_am_gm_and_bounds(f):
    g = evaluation.geometric_mean(f)
    assert g <= np.mean(f) + 1e-12
    assert min(f) - 1e-12 <= g <= max(f) + 1e-12


@settings(max_examples=100, deadline=None)
@given(f=fids, seed=st.integers(0, 1000))
def test_permutation_invariance_and_monotonicity(f, seed):
    g = evaluation.geometric_mean(f)
    perm = np.random.default_rng(seed).permutation(len(f))
    assert evaluation.geometric_mean(np.asarray(f)[perm]) == pytest.approx(g, rel=1e-12)
    lowered = list(f)
    lowered[0] *= 0.5
    assert evaluation.geometric_mean(lowered) < g


@settings(max_examples=100, deadline=None)
@given(f=st.lists(st.floats(0.01, 1.0), min_size=2, max_size=12))
def test_dropping_minimum_never_lowers(f):
    rest = list(f)
    rest.remove(min(f))
    assert evaluation.geometric_mean(rest) >= evaluation.geometric_mean(f) - 1e-12


def test_fidelity_report_subset():
    preds = {q: np.array([0, 1, 1, 0]) for q in range(3)}
    labels = {0: np.array([0, 1, 1, 0]), 1: np.array([0, 1, 0, 0]), 2: np.array([1, 1, 1, 0])}
    rep = evaluation.FidelityReport.from_predictions(preds, labels)
    assert rep.fidelities == {0: 1.0, 1: 0.75, 2: 0.75}
    assert rep.f_gm([0]) == 1.0
    d = rep.to_dict()
    assert d["qubits"][1]["confusion"]["n01"] == 1
    assert d["f_gm"] == pytest.approx(0.75 ** (2 / 3))


def test_compression_report():
    rep = evaluation.compression_report([TEACHER] * 5, [FNN_A, FNN_B, FNN_B, FNN_A, FNN_A])
    assert rep.teacher_params_total == 8_135_005
    assert rep.student_params_total == 8725
    assert abs(rep.ncr - 0.99893) <= 0.0002
    assert round(rep.ncr_vs_baseline, 5) == 0.99464
    assert "not reproduced" in rep.note
    assert rep.breakdown["student:31-16-8-1"] == {"params_each": 657, "count": 3}
    back = CompressionReport.from_json(rep.to_json())
    assert back == rep
    same = evaluation.compression_report([FNN_A], [FNN_A])
    assert same.ncr == 0.0


def test_agreement():
    p = np.array([0, 1, 1, 0])
    z = np.array([-1.0, 2.0, 0.5, -0.2])
    assert evaluation.agreement(p, p, z, z) == (1.0, 0.0)
    rate, dev = evaluation.agreement(p, np.zeros(4, int), z, z + 0.25)
    assert rate == 0.5 and dev == 0.25
    with pytest.raises(ValueError):
        evaluation.agreement(p, p[:3], z, z)


def _bundle(ts, q, d, groups=10):
    cut = dataset.slice_duration(ts, d)
    pre = preprocess.fit_preprocessor(cut, q, preprocess.AveragingSpec(groups))
    net, _ = nn.train_supervised(pre.features_for(cut), cut.states(q), nn.NetworkSpec(2 * groups + 1, (8,)),
                                 nn.TrainConfig(epochs=3, batch_size=64))
    return pre, net


def test_sweep_degenerate_grid(desk_small):
    b = {(1000, 0): _bundle(desk_small, 0, 1000)}
    rep = evaluation.sweep_durations(b, desk_small, [1000], [0])
    pre, net = b[(1000, 0)]
    f = evaluation.assignment_fidelity(nn.predict(net, pre.features_for(desk_small)),
                                       desk_small.states(0))[0]
    assert rep.fidelity == {1000: {0: f}}
    assert rep.best_composite() == rep.composite(1000) == f


def test_sweep_grid_and_missing(desk_small):
    b = {(d, q): _bundle(desk_small, q, d) for d in (1000, 500) for q in (0, 1)}
    rep = evaluation.sweep_durations(b, desk_small, [1000, 500], [0, 1])
    assert rep.durations == [500, 1000]
    assert rep.best_composite() >= rep.composite(1000)
    csv = rep.to_csv().splitlines()
    assert csv[0] == "duration_ns,qubit,fidelity" and len(csv) == 5
    d = rep.to_dict()
    assert set(d["fidelity"]) == {"500", "1000"}
    del b[(500, 1)]
    with pytest.raises(KeyError, match="qubit 1 at 500"):
        evaluation.sweep_durations(b, desk_small, [1000, 500], [0, 1])


def test_check_expectations():
    summary = {"a": {"b": 0.5, "c": [1, 2]}, "n": 657}
    assert evaluation.check_expectations(summary, {"a.b": {"min": 0.4, "max": 0.6},
                                                   "n": {"equals": 657}, "a.c.1": {"equals": 2}}) == []
    probs = evaluation.check_expectations(summary, {"a.b": {"min": 0.6}, "zz": {"min": 0}})
    assert len(probs) == 2 and "missing" in probs[1]
