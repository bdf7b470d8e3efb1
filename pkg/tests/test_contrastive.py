import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from flowshift.contrastive import (
    ContrastiveConfig,
    average_contrastive_loss,
    contrastive_loss_and_grad,
    infonce_pair_loss,
    stratified_batches,
    total_loss,
    total_loss_backward,
    train,
)
from flowshift.drift_sim import generate, make_scenario
from flowshift.errors import BatchSkip, DataError
from flowshift.nn import Autoencoder, GradientTape, forward

from oracles import central_difference, cosine, infonce_loop, rel_error

sims = st.floats(-1.0, 1.0)


def test_equal_similarities_give_ln2():
    for tau in (0.02, 0.5, 1.0):
        assert infonce_pair_loss(0.3, [0.3], tau) == pytest.approx(math.log(2), abs=1e-15)


def test_scalar_value_tau_one():
    assert infonce_pair_loss(1.0, [-1.0], 1.0) == pytest.approx(math.log1p(math.exp(-2)), abs=1e-15)
    assert infonce_pair_loss(1.0, [-1.0], 1.0) == pytest.approx(0.12692801104297263, abs=1e-15)


def test_small_temperature_stays_finite():
    value = infonce_pair_loss(1.0, [-1.0], 0.02)
    assert math.isfinite(value)
    assert value == pytest.approx(math.exp(-100), abs=1e-12)


def test_empty_negatives_signal_skip():
    with pytest.raises(BatchSkip):
        infonce_pair_loss(0.5, [], 0.1)


@given(sims, st.lists(sims, min_size=1, max_size=6), st.floats(0.01, 1.0))
def test_pair_loss_nonnegative(anchor, negs, tau):
    value = infonce_pair_loss(anchor, negs, tau)
    assert value >= 0
    if tau >= 0.1:
        # at tiny temperatures the softplus tail rounds away against the anchor logit
        assert value > 0


@given(st.integers(1, 8), sims, st.floats(0.05, 1.0))
def test_all_equal_similarities_give_log_one_plus_count(n_neg, s, tau):
    assert infonce_pair_loss(s, [s] * n_neg, tau) == pytest.approx(math.log(1 + n_neg), rel=1e-12)


@given(sims, sims, st.lists(sims, min_size=1, max_size=5), st.floats(0.05, 1.0))
def test_pair_loss_decreases_in_anchor_similarity(a, b, negs, tau):
    assume(abs(a - b) > 1e-6)
    lo, hi = min(a, b), max(a, b)
    assert infonce_pair_loss(hi, negs, tau) < infonce_pair_loss(lo, negs, tau)


@given(sims, st.lists(sims, min_size=1, max_size=5), st.data(), st.floats(0.05, 1.0))
def test_pair_loss_increases_in_any_negative(anchor, negs, data, tau):
    k = data.draw(st.integers(0, len(negs) - 1))
    bumped = data.draw(st.floats(-1.0, 1.0))
    assume(bumped > negs[k] + 1e-6)
    raised = list(negs)
    raised[k] = bumped
    assert infonce_pair_loss(anchor, raised, tau) > infonce_pair_loss(anchor, negs, tau)


@given(st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.floats(0.2, 1.0))
def test_pair_loss_decreasing_in_inverse_temperature(t1, t2, delta):
    assume(abs(t1 - t2) > 1e-6)
    small, large = min(t1, t2), max(t1, t2)
    # one negative, positive gap delta
    assert infonce_pair_loss(delta - 0.5, [-0.5], small) < infonce_pair_loss(delta - 0.5, [-0.5], large)


@given(sims, st.lists(sims, min_size=2, max_size=6), st.randoms())
def test_pair_loss_permutation_invariant(anchor, negs, random):
    shuffled = list(negs)
    random.shuffle(shuffled)
    assert infonce_pair_loss(anchor, shuffled, 0.1) == pytest.approx(infonce_pair_loss(anchor, negs, 0.1), abs=1e-12)


def test_two_identical_normals_one_orthogonal_abnormal():
    emb = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    loss = average_contrastive_loss(emb, [0, 0, 1], 1.0)
    assert loss == pytest.approx(math.log1p(math.exp(-1)), abs=1e-15)
    assert loss == pytest.approx(0.31326168751822286, abs=1e-15)


def test_indistinguishable_embeddings_give_ln2():
    emb = np.ones((4, 3))
    assert average_contrastive_loss(emb, [0, 0, 0, 1], 0.02) == pytest.approx(math.log(2), abs=1e-12)


@pytest.mark.parametrize("labels", [[0, 1, 1], [0, 0, 0], [1, 1]])
def test_degenerate_batches_signal_skip(labels):
    with pytest.raises(BatchSkip):
        contrastive_loss_and_grad(np.random.default_rng(0).normal(size=(len(labels), 3)), labels, 0.1)


@given(st.integers(0, 10_000), st.integers(2, 7), st.integers(1, 4), st.sampled_from([0.02, 0.1, 1.0]))
def test_vectorised_loss_matches_pair_loop(seed, n_normal, n_abnormal, tau):
    rng = np.random.default_rng(seed)
    emb = rng.normal(size=(n_normal + n_abnormal, 4))
    labels = rng.permutation([0] * n_normal + [1] * n_abnormal)
    assert average_contrastive_loss(emb, labels, tau) == pytest.approx(infonce_loop(emb, labels, tau), rel=1e-10)


def test_degenerate_model_total_loss_is_two_ln2():
    m = Autoencoder.create(4, hidden_dim=5, latent_dim=3, seed=0)
    for layer in m.encoder + m.decoder:
        layer.weight[:] = 0
    # constant outputs equal to the (nonzero) biases
    m.encoder[-1].bias[:] = 1.0
    m.decoder[-1].bias[:] = 1.0
    x = np.random.default_rng(0).normal(size=(3, 4))
    assert total_loss(m, x, [0, 0, 1], 0.02) == pytest.approx(2 * math.log(2), abs=1e-12)
    x = np.random.default_rng(0).normal(size=(5, 4))
    assert total_loss(m, x, [0, 0, 1, 0, 1], 0.02) == pytest.approx(2 * math.log(3), abs=1e-12)


def test_total_loss_is_sum_of_components():
    rng = np.random.default_rng(2)
    m = Autoencoder.create(4, hidden_dim=6, latent_dim=3, seed=2)
    x, labels = rng.normal(size=(6, 4)), [0, 0, 1, 0, 1, 0]
    pair = forward(m, x)
    parts = [average_contrastive_loss(pair.component(c), labels, 0.1) for c in ("en", "de")]
    assert total_loss(m, x, labels, 0.1) == pytest.approx(sum(parts), rel=1e-14)


@pytest.mark.parametrize("seed", range(3))
def test_embedding_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    emb = rng.normal(size=(9, 4))
    labels = np.array([0, 0, 1, 0, 1, 0, 0, 1, 0])
    _, grad = contrastive_loss_and_grad(emb, labels, 0.1)
    numeric = central_difference(lambda: average_contrastive_loss(emb, labels, 0.1), [emb], h=1e-6)[0]
    assert rel_error(grad, numeric) < 1e-7


def test_zero_norm_rows_are_excluded():
    emb = np.array([[1.0, 0.2], [0.9, 0.1], [0.0, 0.0], [-0.2, 1.0]])
    loss, grad = contrastive_loss_and_grad(emb, [0, 0, 0, 1], 0.5)
    assert loss == pytest.approx(average_contrastive_loss(emb[[0, 1, 3]], [0, 0, 1], 0.5), rel=1e-14)
    assert not grad[2].any()


def test_model_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    m = Autoencoder.create(5, hidden_dim=6, latent_dim=3, seed=7)
    x = rng.normal(size=(8, 5))
    labels = np.array([0, 1, 0, 0, 1, 0, 0, 1])
    tape = GradientTape(m)
    total_loss_backward(tape, x, labels, 0.1)
    params = [p for _, p in m.named_parameters()]
    numeric = central_difference(lambda: total_loss(m, x, labels, 0.1), params)
    for (path, _), g in zip(m.named_parameters(), numeric):
        assert rel_error(tape.grads[path], g) < 1e-5, path


def test_batch_counts_follow_prior_with_minimums():
    cfg = ContrastiveConfig(batch_size=64)
    assert cfg.batch_counts(1400, 600) == (45, 19)
    assert cfg.batch_counts(1999, 1) == (63, 1)
    assert cfg.batch_counts(1, 999) == (2, 62)
    assert ContrastiveConfig(batch_normals=5, batch_abnormals=3).batch_counts(10, 10) == (5, 3)


@given(st.integers(0, 40), st.integers(0, 40), st.integers(2, 6), st.integers(1, 4), st.integers(0, 999))
def test_stratified_batches_have_fixed_composition(n0, n1, bn, ba, seed):
    labels = np.array([0] * n0 + [1] * n1)
    batches = stratified_batches(labels, bn, ba, np.random.default_rng(seed))
    assert len(batches) == min(n0 // bn, n1 // ba)
    seen = np.concatenate(batches) if batches else np.array([], dtype=int)
    assert len(set(seen.tolist())) == len(seen)
    for b in batches:
        assert np.sum(labels[b] == 0) == bn and np.sum(labels[b] == 1) == ba


def _window(seed=0, n=400):
    w = generate(make_scenario("none", d=8, n_per_window=n, n_windows=1, seed=seed))[0]
    return w.x, w.y


def test_train_rejects_single_class():
    x, y = _window()
    with pytest.raises(DataError):
        train(Autoencoder.create(8, seed=0), x[y == 0], y[y == 0], ContrastiveConfig(epochs=1))


def test_zero_epochs_returns_unchanged_copy():
    x, y = _window()
    m = Autoencoder.create(8, seed=0)
    out, trace = train(m, x, y, ContrastiveConfig(epochs=0))
    assert out.equals(m) and out is not m and trace == []


def test_zero_learning_rate_keeps_parameters_and_flat_trace():
    x, y = _window()
    m = Autoencoder.create(8, seed=0)
    out, trace = train(m, x, y, ContrastiveConfig(epochs=3, learning_rate=0.0, seed=1))
    assert out.equals(m)
    assert len(trace) == 3 and len(set(np.round(trace, 12))) >= 1


def test_training_tightens_normal_cluster():
    x, y = _window(seed=3, n=600)
    m = Autoencoder.create(8, seed=3)

    def mean_normal_similarity(model):
        z = forward(model, x[y == 0][:80]).encoder
        return np.mean([cosine(z[i], z[j]) for i in range(len(z)) for j in range(len(z)) if i != j])

    trained, trace = train(m, x, y, ContrastiveConfig(epochs=5, seed=3))
    assert mean_normal_similarity(trained) > mean_normal_similarity(m)
    assert trace[-1] < trace[0]


def test_training_is_deterministic():
    x, y = _window()
    a, ta = train(Autoencoder.create(8, seed=1), x, y, ContrastiveConfig(epochs=2, seed=5))
    b, tb = train(Autoencoder.create(8, seed=1), x, y, ContrastiveConfig(epochs=2, seed=5))
    assert a.equals(b) and ta == tb
