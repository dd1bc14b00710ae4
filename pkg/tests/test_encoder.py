import csv
import math

import numpy as np
import pytest

from augbound._seeding import derive_rng
from augbound.augment import AugDistribution
from augbound.encoder import (Encoder, TrainConfig, TrainingDiverged, fit_linear_probe, flat_gradient, infonce_gradient,
                              infonce_loss, init_encoder, linear_probe, load_checkpoint, save_checkpoint, train,
                              write_trace_csv)
from augbound.pixel_model import sample_dataset, toy_config


def tuples(seed, n=3, K=2, shape=(2, 2, 3)):
    rng = derive_rng(seed)
    return rng.random((n, *shape)), rng.random((n, *shape)), rng.random((n, K, *shape))


def fd_relative_error(enc, batch, eps=1e-6):
    _, g = infonce_gradient(enc, *batch)
    g = flat_gradient(enc, g)
    theta = enc.get_flat()
    fd = np.zeros_like(theta)
    for i in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[i] += eps
        dn[i] -= eps
        enc.set_flat(up)
        lu = infonce_loss(enc, *batch)
        enc.set_flat(dn)
        ld = infonce_loss(enc, *batch)
        fd[i] = (lu - ld) / (2 * eps)
    enc.set_flat(theta)
    return np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd), 1e-300)


@pytest.mark.parametrize("arch", ["linear", "mlp1"])
def test_gradient_matches_finite_differences(arch):
    for point in range(5):
        enc = init_encoder(arch, 12, 3, hidden=5, seed=point)
        assert fd_relative_error(enc, tuples(point)) <= 1e-4


def test_gradient_by_hand_single_tuple():
    """h = W x without normalisation; loss = log(1 + exp(h.hn - h.hp)), so
    dL/dW = s [(hn - hp) x^T + h (xn - xp)^T] with s the logistic of the gap."""
    W = np.array([[0.5, -0.2, 0.1], [0.3, 0.4, -0.6]])
    enc = Encoder("linear", 3, 2, {"W": W.copy()}, normalize=False)
    x, xp, xn = np.array([1.0, 0.0, 2.0]), np.array([0.5, -1.0, 0.0]), np.array([0.0, 1.0, 1.0])
    h, hp, hn = W @ x, W @ xp, W @ xn
    gap = h @ hn - h @ hp
    s = 1.0 / (1.0 + math.exp(-gap))
    by_hand = s * (np.outer(hn - hp, x) + np.outer(h, xn - xp))
    loss, g = infonce_gradient(enc, x[None], xp[None], xn[None, None])
    assert loss == pytest.approx(math.log1p(math.exp(gap)), rel=1e-14)
    np.testing.assert_allclose(g["W"], by_hand, rtol=1e-12)


def test_duplicated_batch_gives_same_gradient():
    enc = init_encoder("mlp1", 12, 3, hidden=4, seed=1)
    a, p, n = tuples(2)
    l1, g1 = infonce_gradient(enc, a, p, n)
    l2, g2 = infonce_gradient(enc, np.concatenate([a, a]), np.concatenate([p, p]), np.concatenate([n, n]))
    assert l1 == pytest.approx(l2, rel=1e-14)
    for k in g1:
        np.testing.assert_allclose(g1[k], g2[k], rtol=1e-12, atol=1e-15)


def test_outputs_are_unit_norm_and_reproducible():
    x = derive_rng(3).random((20, 4, 4, 3))
    for arch in ("linear", "mlp1"):
        enc = init_encoder(arch, 48, 5, seed=7)
        z = enc(x)
        assert np.all(np.abs(np.linalg.norm(z, axis=1) - 1) < 1e-9)
        np.testing.assert_array_equal(z, init_encoder(arch, 48, 5, seed=7)(x))


def test_identity_encoder_flattens():
    x = derive_rng(4).random((3, 3, 3))
    x /= np.linalg.norm(x)
    enc = init_encoder("identity", 27, 27)
    np.testing.assert_allclose(enc.forward(x), x.ravel(), rtol=1e-14)


def test_zero_weights_use_first_basis_vector():
    enc = Encoder("linear", 6, 3, {"W": np.zeros((3, 6))})
    z = enc(np.ones((4, 6)))
    np.testing.assert_array_equal(z, np.tile([1.0, 0.0, 0.0], (4, 1)))
    assert enc.degenerate == 4


# -- training -----------------------------------------------------------------------

def small_data(C=2, per_class=8, seed=0):
    return [(s.image, s.class_label) for s in sample_dataset(toy_config(num_classes=C, side=6), per_class, seed)]


def test_zero_epochs_and_zero_lr_leave_parameters_unchanged():
    data = small_data()
    enc = init_encoder("linear", 108, 4, seed=0)
    out, trace = train(enc, data, AugDistribution(), TrainConfig(epochs=0))
    np.testing.assert_array_equal(out.get_flat(), enc.get_flat())
    assert trace == []
    out, trace = train(enc, data, AugDistribution(), TrainConfig(epochs=2, lr=0.0))
    np.testing.assert_array_equal(out.get_flat(), enc.get_flat())
    assert len(trace) == 2


def test_training_reduces_loss_and_is_deterministic():
    data = small_data(per_class=16)
    enc = init_encoder("linear", 108, 8, seed=3)
    cfg = TrainConfig(lr=0.5, epochs=200, batch_size=16, K=2, seed=3)
    out, trace = train(enc, data, AugDistribution(), cfg)
    assert trace[-1] <= 0.9 * trace[0]
    again, trace2 = train(enc, data, AugDistribution(), cfg)
    assert trace == trace2
    np.testing.assert_array_equal(out.get_flat(), again.get_flat())


def test_non_finite_loss_aborts_with_trace():
    data = small_data()
    enc = init_encoder("linear", 108, 4, seed=0)
    enc.params["W"][0, 0] = np.nan
    with pytest.raises(TrainingDiverged) as err:
        train(enc, data, AugDistribution(), TrainConfig(epochs=3))
    assert len(err.value.trace) == 1 and not math.isfinite(err.value.trace[0])


def test_train_config_validation_and_decay():
    cfg = TrainConfig(lr=1.0, decay_epochs=(2, 4), decay_factor=0.5)
    assert [cfg.lr_at(e) for e in range(6)] == [1.0, 1.0, 0.5, 0.5, 0.25, 0.25]
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(decay_epochs=(5, 2))


# -- linear probe ------------------------------------------------------------------------

def test_probe_separable_embedding_is_perfect():
    rng = derive_rng(5)
    data = [(rng.random(4) + 3 * np.eye(4)[c], c) for c in range(4) for _ in range(5)]
    enc = init_encoder("identity", 4, 4, normalize=False)
    assert linear_probe(enc, data, data, epochs=200) == 1.0


def test_probe_random_labels_near_chance():
    rng = derive_rng(6)
    C, n = 4, 800
    X = rng.normal(size=(200 + n, 6))
    y = rng.integers(C, size=200 + n)
    enc = init_encoder("linear", 6, 3, seed=2)
    acc = linear_probe(enc, list(zip(X[:200], y[:200])), list(zip(X[200:], y[200:])), epochs=50, num_classes=C)
    assert abs(acc - 1 / C) <= 4 * math.sqrt(0.25 * 0.75 / n)


def test_probe_zero_epochs_picks_lowest_class():
    feats = derive_rng(7).normal(size=(9, 3))
    labels = np.array([2, 1, 0, 1, 2, 2, 0, 1, 2])
    probe = fit_linear_probe(feats, labels, 3, epochs=0)
    assert np.all(probe.predict(feats) == 0)
    with pytest.raises(ValueError, match="two classes"):
        fit_linear_probe(feats, np.zeros(9, int), 3)


# -- persistence ---------------------------------------------------------------------------

@pytest.mark.parametrize("arch", ["identity", "linear", "mlp1"])
def test_checkpoint_round_trip(arch, tmp_path):
    enc = init_encoder(arch, 12, 12 if arch == "identity" else 3, hidden=4, seed=9)
    save_checkpoint(enc, tmp_path / "enc.bin")
    back = load_checkpoint(tmp_path / "enc.bin")
    assert (back.arch, back.in_dim, back.out_dim, back.hidden) == (enc.arch, enc.in_dim, enc.out_dim, enc.hidden)
    np.testing.assert_array_equal(back.get_flat(), enc.get_flat())
    assert (tmp_path / "enc.bin").read_bytes()[:5] == b"AENC1"


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"NOPE!" + bytes(20))
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(tmp_path / "x.bin")


def test_trace_csv(tmp_path):
    write_trace_csv([1.5, 0.1 + 0.2], tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["epoch", "risk"] and float(rows[2][1]) == 0.1 + 0.2
