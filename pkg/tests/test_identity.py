import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gazetrack.errors import DimensionMismatch
from gazetrack.identity import (
    ClassPosterior,
    MultiFixationRbm,
    Readout,
    accumulate,
    classify,
    log_softmax,
    mf_energy,
    mf_free_energy,
    mf_hidden_probs,
    mf_positive_stats,
    one_hot,
    train_mfrbm,
    train_readout,
)


def random_model(rng, F=3, n_h=4, n_h2=3, K=2, delta=2, scale=1.0):
    return MultiFixationRbm.random(F, n_h, n_h2, K, delta, rng, scale).replace(
        b=rng.normal(size=n_h), d=rng.normal(size=n_h2)
    )


def random_window(rng, model):
    h = rng.random((model.delta, model.n_h))
    z = np.stack([one_hot(k, model.K) for k in rng.integers(model.K, size=model.delta)])
    return h, z


def enumerate_conditional(h, z, model):
    """Marginals p(h2_j = 1 | window) from the Boltzmann distribution over all 2^n_h2 states."""
    states = np.array(list(itertools.product([0.0, 1.0], repeat=model.n_h2)))
    energies = np.array([mf_energy(h, z, s, model) for s in states])
    logp = -energies - np.logaddexp.reduce(-energies)
    return np.exp(logp) @ states, states, np.exp(logp)


def test_energy_examples():
    rng = np.random.default_rng(0)
    m = random_model(rng)
    h = np.zeros((m.delta, m.n_h))
    z = np.stack([one_hot(0, m.K)] * m.delta)
    assert mf_energy(h, z, np.zeros(m.n_h2), m) == 0.0
    zero = m.replace(P=np.zeros_like(m.P), W=np.zeros_like(m.W), V=np.zeros_like(m.V))
    h, z = random_window(rng, m)
    h2 = np.array([1.0, 0.0, 1.0])
    assert mf_energy(h, z, h2, zero) == pytest.approx(-m.d @ h2 - np.sum(h @ m.b), rel=1e-14)
    one = MultiFixationRbm(np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1)), np.ones(1), np.ones(1), 1)
    assert mf_energy(np.ones((1, 1)), np.ones((1, 1)), np.ones(1), one) == -1.0


def test_energy_linear_in_h2_and_h():
    rng = np.random.default_rng(1)
    m = random_model(rng)
    h, z = random_window(rng, m)
    a, b = rng.random(m.n_h2), rng.random(m.n_h2)
    lhs = mf_energy(h, z, 0.3 * a + 0.7 * b, m)
    assert lhs == pytest.approx(0.3 * mf_energy(h, z, a, m) + 0.7 * mf_energy(h, z, b, m), rel=1e-12)
    h2 = rng.random(m.n_h2)
    h_alt = h.copy()
    h_alt[0] = rng.random(m.n_h)
    h_mix = h.copy()
    h_mix[0] = 0.4 * h[0] + 0.6 * h_alt[0]
    got = mf_energy(h_mix, z, h2, m)
    want = 0.4 * mf_energy(h, z, h2, m) + 0.6 * mf_energy(h_alt, z, h2, m)
    assert got == pytest.approx(want, rel=1e-12)


def test_zero_parameters_give_half():
    m = MultiFixationRbm(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 2)), np.zeros(4), np.zeros(3), 2)
    h, z = random_window(np.random.default_rng(2), m)
    np.testing.assert_array_equal(mf_hidden_probs(h, z, m), 0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10), st.integers(1, 3), st.integers(1, 4), st.integers(0, 10_000))
def test_conditional_matches_enumeration(n_h2, delta, K, seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, F=3, n_h=4, n_h2=n_h2, K=K, delta=delta)
    h, z = random_window(rng, m)
    exact, _, _ = enumerate_conditional(h, z, m)
    np.testing.assert_allclose(mf_hidden_probs(h, z, m), exact, rtol=0, atol=1e-10)


def test_free_energy_matches_enumeration():
    rng = np.random.default_rng(3)
    m = random_model(rng, n_h2=5)
    h, z = random_window(rng, m)
    states = np.array(list(itertools.product([0.0, 1.0], repeat=5)))
    energies = np.array([mf_energy(h, z, s, m) for s in states])
    assert mf_free_energy(h, z, m) == pytest.approx(-np.logaddexp.reduce(-energies), rel=1e-12)


def test_doubling_positive_bias_increases_prob():
    rng = np.random.default_rng(4)
    m = random_model(rng)
    m = m.replace(d=np.abs(m.d) + 0.1)
    h, z = random_window(rng, m)
    assert np.all(mf_hidden_probs(h, z, m.replace(d=2 * m.d)) > mf_hidden_probs(h, z, m))


def test_positive_stats_by_enumeration_and_finite_differences():
    rng = np.random.default_rng(5)
    m = random_model(rng, F=2, n_h=3, n_h2=2, K=2, delta=1)
    windows = [random_window(rng, m) for _ in range(6)]
    stats = mf_positive_stats(np.stack([w[0] for w in windows]), np.stack([w[1] for w in windows]), m)
    eps = 1e-6
    for name in "PWVbd":
        base = np.array(getattr(m, name))
        ref = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[idx] += eps
            minus[idx] -= eps
            mp, mm = m.replace(**{name: plus}), m.replace(**{name: minus})
            total = 0.0
            for h, z in windows:
                _, states, p = enumerate_conditional(h, z, m)
                dE = [(mf_energy(h, z, s, mp) - mf_energy(h, z, s, mm)) / (2 * eps) for s in states]
                total += -np.dot(p, dE)
            ref[idx] = total / len(windows)
        np.testing.assert_allclose(stats[name], ref, rtol=1e-6, atol=1e-8, err_msg=name)


def test_train_lr_zero_unchanged():
    rng = np.random.default_rng(6)
    m = random_model(rng)
    h = rng.random((10, m.delta, m.n_h))
    z = np.tile(one_hot(1, m.K), (10, m.delta, 1))
    assert train_mfrbm(h, z, m, 0.0, 3, rng) is m


def test_free_energy_gap_widens():
    rng = np.random.default_rng(7)
    protos = (rng.random((3, 2, 12)) > 0.5).astype(float)
    idx = rng.integers(3, size=300)
    h = np.clip(protos[idx] + rng.normal(0, 0.05, (300, 2, 12)), 0, 1)
    z = np.tile(np.stack([one_hot(0, 2), one_hot(1, 2)]), (300, 1, 1))
    noise = rng.random((300, 2, 12))
    m = MultiFixationRbm.random(8, 12, 6, 2, 2, rng, 0.3)
    log = []
    train_mfrbm(h, z, m, 0.05, 30, rng, batch_size=50, noise=noise, log=log)
    assert log[-1] > log[0]


def test_dimension_checks():
    rng = np.random.default_rng(8)
    m = random_model(rng)
    with pytest.raises(DimensionMismatch):
        mf_hidden_probs(np.zeros((m.delta + 1, m.n_h)), np.zeros((m.delta + 1, m.K)), m)
    with pytest.raises(DimensionMismatch):
        MultiFixationRbm(np.zeros((2, 3)), np.zeros((3, 4)), np.zeros((2, 2)), np.zeros(4), np.zeros(3), 1)
    with pytest.raises(DimensionMismatch):
        classify(np.zeros(3), Readout.zeros(2, 4))


def test_mfrbm_serialization_roundtrip(tmp_path):
    import struct

    m = random_model(np.random.default_rng(9), F=3, n_h=4, n_h2=5, K=2, delta=3)
    p = tmp_path / "m.bin"
    m.save(p)
    raw = p.read_bytes()
    assert raw[:4] == b"MFR1"
    assert struct.unpack("<IIIII", raw[4:24]) == (3, 4, 5, 2, 3)
    back = MultiFixationRbm.load(p)
    for k in "PWVbd":
        np.testing.assert_array_equal(getattr(back, k), getattr(m, k))
    assert back.delta == 3


def test_classify_examples():
    post = classify(np.ones(4), Readout.zeros(5, 4))
    np.testing.assert_allclose(post.probs, 0.2, rtol=1e-14)
    r = Readout(np.zeros((2, 1)), np.array([math.log(3.0), 0.0]))
    np.testing.assert_allclose(classify(np.zeros(1), r).probs, [0.75, 0.25], rtol=1e-14)
    shifted = Readout(np.zeros((2, 1)), np.array([math.log(3.0) + 7, 7.0]))
    np.testing.assert_allclose(classify(np.zeros(1), shifted).probs, [0.75, 0.25], rtol=1e-12)


def test_accumulate_examples():
    p = ClassPosterior(np.log([0.6, 0.4]))
    np.testing.assert_allclose(accumulate([p]).probs, [0.6, 0.4], rtol=1e-14)
    u = ClassPosterior(np.log([0.5, 0.5]))
    np.testing.assert_allclose(accumulate([u, u]).probs, [0.5, 0.5], rtol=1e-14)
    np.testing.assert_allclose(accumulate([p, p]).probs, [0.36 / 0.52, 0.16 / 0.52], rtol=1e-12)
    assert accumulate([p, p]).probs[0] == pytest.approx(0.692308, abs=1e-6)


@given(st.lists(st.lists(st.floats(-20, 20), min_size=3, max_size=3), min_size=1, max_size=6), st.randoms())
def test_accumulate_order_invariant_and_normalized(logits, rnd):
    posts = [ClassPosterior(log_softmax(np.array(l))) for l in logits]
    a = accumulate(posts)
    shuffled = list(posts)
    rnd.shuffle(shuffled)
    b = accumulate(shuffled)
    np.testing.assert_allclose(a.probs, b.probs, rtol=1e-9, atol=1e-12)
    assert abs(a.probs.sum() - 1) < 1e-9


def test_argmax_tie_lowest_index():
    assert ClassPosterior(np.log(np.full(4, 0.25))).argmax() == 0


def test_readout_learns_separable():
    rng = np.random.default_rng(10)
    X = np.vstack([rng.normal(-1, 0.3, (50, 2)), rng.normal(1, 0.3, (50, 2))])
    y = np.repeat([0, 1], 50)
    r = train_readout(X, y, 2)
    acc = np.mean([classify(x, r).argmax() == t for x, t in zip(X, y)])
    assert acc > 0.95


def test_readout_serialization(tmp_path):
    r = Readout(np.arange(6.0).reshape(2, 3), np.array([0.5, -0.5]))
    r.save(tmp_path / "r.bin")
    back = Readout.load(tmp_path / "r.bin")
    np.testing.assert_array_equal(back.W, r.W)
    np.testing.assert_array_equal(back.bias, r.bias)
    assert (tmp_path / "r.bin").read_bytes()[:4] == b"LGR1"
