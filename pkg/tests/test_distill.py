import math

import numpy as np
import pytest

from qreadout import distill, nn
from qreadout.distill import DistillBatchView, DistillConfig
from qreadout.nn import FNN_A, FNN_B, Network, NetworkSpec

ALPHAS = (0.0, 0.3, 1.0)
TEMPS = (1.0, 2.0, 5.0)


def test_loss_examples():
    assert distill.distill_loss(0.0, 2.0, 1, alpha=0.0, temperature=1.0) == 4.0
    v = distill.distill_loss(0.0, 2.0, 1, alpha=0.5, temperature=1.0)
    assert v == pytest.approx(0.5 * math.log(2) + 2.0, abs=1e-12)
    assert round(float(v), 4) == 2.3466
    # alpha = 1 ignores the teacher entirely
    a = distill.distill_loss(0.7, 2.0, 0, 1.0, 3.0)
    b = distill.distill_loss(0.7, -50.0, 0, 1.0, 3.0)
    assert a == b == nn.bce_with_logits(0.7, 0)


@pytest.mark.parametrize("alpha", ALPHAS)
@pytest.mark.parametrize("T", TEMPS)
def test_loss_gradient_wrt_logit(alpha, T):
    h = 1e-5
    for s, t, y in [(0.3, -1.2, 1), (-2.0, 0.5, 0), (4.0, 4.5, 1)]:
        num = (distill.distill_loss(s + h, t, y, alpha, T)
               - distill.distill_loss(s - h, t, y, alpha, T)) / (2 * h)
        ana = distill.distill_loss_grad(s, t, y, alpha, T)
        assert abs(num - ana) / max(abs(ana), 1e-8) < 1e-6


@pytest.mark.parametrize("spec", [FNN_A, FNN_B], ids=["A", "B"])
@pytest.mark.parametrize("alpha", ALPHAS)
@pytest.mark.parametrize("T", TEMPS)
def test_network_gradient_through_distill_loss(spec, alpha, T):
    from test_nn import _finite_difference_check

    rng = np.random.default_rng(1)
    t = rng.normal(size=5)
    y = np.array([1, 0, 0, 1, 1], dtype=float)
    obj = distill.distill_objective(t, y, alpha, T)
    idx = np.arange(5)
    assert _finite_difference_check(spec, 3, lambda z: obj(z, idx)) < 1e-5


def test_loss_affine_in_alpha():
    rng = np.random.default_rng(0)
    s, t = rng.normal(size=50), rng.normal(size=50)
    y = rng.integers(0, 2, 50)
    mid = distill.distill_loss(s, t, y, 0.5, 2.0)
    ends = 0.5 * (distill.distill_loss(s, t, y, 0.0, 2.0) + distill.distill_loss(s, t, y, 1.0, 2.0))
    np.testing.assert_array_max_ulp(mid, ends, maxulp=1)


@pytest.mark.parametrize("bad", [dict(alpha=-0.1), dict(alpha=1.5), dict(temperature=0.0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        DistillConfig(**bad)


def test_view_length_mismatch():
    with pytest.raises(ValueError, match="lengths differ"):
        DistillBatchView(np.zeros((4, 31)), np.zeros((5, 10)), np.zeros(4))


def _toy_view(n=400, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    raw = rng.normal(size=(n, 10)) + (2 * y[:, None] - 1) * 0.8
    feats = np.concatenate([raw[:, :5], raw[:, 5:].mean(axis=1, keepdims=True)], axis=1)
    return DistillBatchView(feats, raw, y)


def _teacher(view):
    net, _ = nn.train_supervised(view.raw, view.labels, NetworkSpec(10, (12,)),
                                 nn.TrainConfig(epochs=5, batch_size=32, seed=2))
    return net


def test_alpha_one_equals_supervised():
    view = _toy_view()
    spec = NetworkSpec(6, (16, 8))
    cfg = DistillConfig(alpha=1.0, epochs=4, batch_size=32, seed=9)
    student, _ = distill.train_student(_teacher(view), view, spec, cfg)
    sup, _ = nn.train_supervised(view.features, view.labels, spec,
                                 nn.TrainConfig(epochs=4, batch_size=32, seed=9))
    np.testing.assert_allclose(nn.forward(student, view.features), nn.forward(sup, view.features),
                               rtol=1e-12, atol=0)
    assert np.array_equal(nn.predict(student, view.features), nn.predict(sup, view.features))


def test_teacher_is_not_modified():
    view = _toy_view()
    teacher = _teacher(view)
    before = [p.copy() for p in teacher.params]
    distill.train_student(teacher, view, NetworkSpec(6, (8,)), DistillConfig(epochs=2))
    assert all(np.array_equal(a, b) for a, b in zip(before, teacher.params))


def test_zero_teacher_shrinks_student_logits():
    view = _toy_view()
    zero = Network(NetworkSpec(10, (4,)), (np.zeros((4, 10)), np.zeros((1, 4))),
                   (np.zeros(4), np.zeros(1)))
    mags = []
    spec = NetworkSpec(6, (16, 8))
    init = nn.init_network(spec, 0)
    # scale the initial output layer up so there is something to shrink
    init = Network(spec, (*init.weights[:-1], init.weights[-1] * 20), init.biases)
    mags.append(np.mean(np.abs(nn.forward(init, view.features))))
    t = distill.teacher_logits(zero, view.raw)
    nn.fit(init, view.features, distill.distill_objective(t, view.labels, 0.0, 2.0),
           DistillConfig(alpha=0.0, epochs=3, batch_size=32),
           callback=lambda e, net: mags.append(np.mean(np.abs(nn.forward(net, view.features)))))
    assert all(b < a for a, b in zip(mags, mags[1:]))


def test_cached_logits_equivalent():
    view = _toy_view()
    teacher = _teacher(view)
    cfg = DistillConfig(epochs=2, batch_size=64)
    a, _ = distill.train_student(teacher, view, NetworkSpec(6, (8,)), cfg)
    b, _ = distill.train_student(None, view, NetworkSpec(6, (8,)), cfg,
                                 cached_logits=distill.teacher_logits(teacher, view.raw))
    assert all(np.array_equal(p, q) for p, q in zip(a.params, b.params))
    with pytest.raises(ValueError):
        distill.train_student(None, view, NetworkSpec(6, (8,)), cfg, cached_logits=np.zeros(3))
    with pytest.raises(ValueError, match="feature width"):
        distill.train_student(teacher, view, NetworkSpec(7, (8,)), cfg)


def test_student_tracks_teacher_on_toy():
    view = _toy_view(n=2000)
    teacher = _teacher(view)
    student, _ = distill.train_student(teacher, view, NetworkSpec(6, (16, 8)),
                                       DistillConfig(epochs=10, batch_size=64))
    f_t = np.mean(nn.predict(teacher, view.raw) == view.labels)
    f_s = np.mean(nn.predict(student, view.features) == view.labels)
    assert f_s >= f_t - 0.015
