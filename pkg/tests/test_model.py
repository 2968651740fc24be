import numpy as np
import pytest

from skipwalk.model import (NoiseDistribution, ParityError, RsnModel, TrainConfig, nce_backward,
                            nce_forward, nce_loss, noise_from_graph, pad_sequences,
                            sample_negatives)
from gradcheck import model_grad_error, numeric_grad, rel_error

TOL = 1e-4


def tiny_batch(ne, nr, B=4, L=3, seed=5):
    rng = np.random.default_rng(seed)
    tok = np.zeros((B, 2 * L + 1), dtype=np.int64)
    tok[:, 0::2] = rng.integers(ne, size=(B, L + 1))
    tok[:, 1::2] = ne + rng.integers(nr, size=(B, L))
    return tok


def noises(ne, nr):
    return NoiseDistribution(np.arange(1, ne + 1)), NoiseDistribution(np.arange(1, nr + 1))


def test_nce_all_zero_scores():
    k = 7
    h = np.zeros((3, 4))
    loss, _ = nce_forward(h, np.array([0, 1, 2]), np.arange(3, 10), np.zeros((4, 10)), np.zeros(10))
    assert np.allclose(loss, (k + 1) * np.log(2), atol=1e-12)


def test_nce_saturation_is_finite():
    W = np.zeros((1, 3))
    W[0] = [1.0, -1.0, -1.0]
    h = np.array([[1000.0]])
    loss, cache = nce_forward(h, np.array([0]), np.array([1, 2]), W, np.zeros(3))
    assert np.isfinite(loss).all() and loss[0] < 1e-12
    dh, dW, db = nce_backward(np.ones(1), cache)
    assert np.isfinite(dh).all() and np.abs(dh).max() < 1e-12
    loss, _ = nce_forward(-h, np.array([0]), np.array([1, 2]), W, np.zeros(3))
    assert np.isfinite(loss).all() and loss[0] == pytest.approx(3000.0)


@pytest.mark.parametrize("shared", [True, False])
def test_nce_grad(shared):
    rng = np.random.default_rng(1)
    N, d, V, k = 5, 4, 9, 3
    h, W, b = rng.normal(size=(N, d)), rng.normal(size=(d, V)), rng.normal(size=V)
    tgt = rng.integers(V, size=N)
    negs = rng.integers(V, size=k) if shared else rng.integers(V, size=(N, k))
    mask = (rng.random((N, k)) > 0.3).astype(float)
    up = rng.normal(size=N)
    f = lambda: float((nce_forward(h, tgt, negs, W, b, mask)[0] * up).sum())
    dh, dW, db = nce_backward(up, nce_forward(h, tgt, negs, W, b, mask)[1])
    assert rel_error(numeric_grad(f, h), dh) < TOL
    assert rel_error(numeric_grad(f, W), dW) < TOL
    assert rel_error(numeric_grad(f, b), db) < TOL


def test_nce_loss_single():
    rng = np.random.default_rng(2)
    W, b = rng.normal(size=(3, 6)), rng.normal(size=6)
    h = rng.normal(size=3)
    loss, dh, dW, db = nce_loss(h, 2, [0, 4], W, b)
    s = lambda x: 1 / (1 + np.exp(-x))
    ref = -np.log(s(h @ W[:, 2] + b[2])) - np.log(s(-(h @ W[:, 0] + b[0]))) - np.log(s(-(h @ W[:, 4] + b[4])))
    assert loss == pytest.approx(ref, abs=1e-12)
    assert dh.shape == (3,) and dW.shape == W.shape and db.shape == b.shape


def test_noise_distribution():
    nd = NoiseDistribution([1, 16, 0, 81])
    w = np.array([1, 8, 0, 27.0])
    assert np.allclose(nd.probs, w / w.sum())
    draws = nd.draw(20000, np.random.default_rng(0))
    assert (draws != 2).all()
    assert np.allclose(np.bincount(draws, minlength=4) / 20000, nd.probs, atol=0.01)


def test_negatives_exclude_positive():
    nd = NoiseDistribution(np.ones(5))
    rng = np.random.default_rng(0)
    for pos in range(5):
        negs = sample_negatives(nd, 4, pos, rng)
        assert negs.shape == (4,) and (negs != pos).all()
    big = sample_negatives(nd, 4, 1, rng)
    assert ((big >= 0) & (big < 5)).all()
    with pytest.raises(ValueError, match="candidates"):
        sample_negatives(nd, 5, 0, rng)


def test_noise_from_graph(joint50):
    g = joint50[0]
    ent, rel = noise_from_graph(g)
    assert ent.size == g.n_entities and rel.size == g.n_relations


def test_forward_shapes_and_parity():
    cfg = TrainConfig(dim=8, dtype="float64")
    m = RsnModel(10, 4, cfg)
    tok = tiny_batch(10, 4)
    fr = m.forward(tok, train=False)
    assert fr.outputs.shape == (4, 7, 8) == fr.hidden.shape
    bad = tok.copy()
    bad[0, 1] = 3  # an entity where a relation belongs
    with pytest.raises(ParityError):
        m.forward(bad, train=False)
    bad = tok.copy()
    bad[0, 2] = 12
    with pytest.raises(ParityError):
        m.forward(bad, train=False)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(variant="gru")
    with pytest.raises(ValueError):
        TrainConfig(dropout=1.0)
    with pytest.raises(ValueError):
        TrainConfig(dim=0)


def test_skip_connection_wiring():
    # rsn: relation-position output = S h + normalised subject input
    cfg = TrainConfig(dim=6, dtype="float64", variant="rsn")
    m = RsnModel(10, 4, cfg, np.random.default_rng(0))
    tok = tiny_batch(10, 4, B=6)
    fr = m.forward(tok, train=True, rng=np.random.default_rng(0))
    xin = fr.cache["xin"]
    h = fr.hidden
    assert np.allclose(fr.skip_out[:, 1::2], h[:, 1::2] @ m.skip.value.T + xin[:, 0:-1:2])
    assert np.allclose(fr.skip_out[:, 0::2], h[:, 0::2])
    m.variant = "rrn"
    fr = m.forward(tok, train=True, rng=np.random.default_rng(0))
    assert np.allclose(fr.skip_out[:, 1:], fr.hidden[:, 1:] + fr.hidden[:, :-1])


@pytest.mark.parametrize("variant", ["rsn", "rnn", "rrn"])
def test_full_model_gradients(variant):
    ne, nr = 20, 10
    cfg = TrainConfig(dim=8, negatives=5, dropout=0.2, variant=variant, dtype="float64")
    m = RsnModel(ne, nr, cfg, np.random.default_rng(1))
    prng = np.random.default_rng(2)
    for p in m.parameters().values():
        p.value += prng.normal(0, 0.1, p.shape)  # move batch norm off its identity start
    tok = tiny_batch(ne, nr)
    en, rn = noises(ne, nr)

    def loss():
        m.zero_grad()
        return m.loss_and_grads(tok, np.random.default_rng(9), en, rn)[0]

    worst, where = model_grad_error(m, loss, eps=1e-4)
    assert worst <= TOL, (worst, where)


def test_padding_is_ignored():
    ne, nr = 12, 4
    cfg = TrainConfig(dim=6, negatives=3, dtype="float64")
    seqs = [list(r) for r in tiny_batch(ne, nr, B=3)]
    seqs[1] = seqs[1][:3]
    tok, mask = pad_sequences(seqs, ne)
    assert tok.shape == (3, 7) and mask.sum() == 7 + 3 + 7
    en, rn = noises(ne, nr)
    m = RsnModel(ne, nr, cfg, np.random.default_rng(0))
    a = m.loss_and_grads(tok, np.random.default_rng(1), en, rn, mask)
    g1 = m.embedding.grad.copy()
    tok2 = tok.copy()
    tok2[1, 3::2] = ne + 2
    tok2[1, 4::2] = 5
    m.zero_grad()
    b = m.loss_and_grads(tok2, np.random.default_rng(1), en, rn, mask)
    assert a[1] == b[1] == 6 + 2 + 6
    assert a[0] == pytest.approx(b[0], abs=1e-12)
    assert np.allclose(g1, m.embedding.grad)


def test_overfit_single_batch():
    ne, nr = 30, 6
    cfg = TrainConfig(dim=16, negatives=5, lr=0.01)
    m = RsnModel(ne, nr, cfg, np.random.default_rng(0))
    tok = tiny_batch(ne, nr, B=16, L=4)
    en, rn = noises(ne, nr)
    rng = np.random.default_rng(3)
    losses = []
    for _ in range(50):
        loss, _ = m.loss_and_grads(tok, rng, en, rn)
        m.step()
        losses.append(loss)
    assert np.mean(losses[-10:]) < np.mean(losses[:10])
    assert losses[-1] < 0.5 * losses[0]


def test_checkpoint_round_trip(tmp_path):
    ne, nr = 15, 4
    m = RsnModel(ne, nr, TrainConfig(dim=8, negatives=3, variant="rrn"))
    en, rn = noises(ne, nr)
    tok = tiny_batch(ne, nr)
    m.loss_and_grads(tok, np.random.default_rng(0), en, rn)
    m.step()
    p = tmp_path / "m.skw"
    m.save(p, {"epoch": 3})
    m2, meta = RsnModel.load(p)
    assert meta["epoch"] == 3 and m2.variant == "rrn" and m2.embedding.step_count == 1
    for k, prm in m.parameters().items():
        assert np.array_equal(prm.value, m2.parameters()[k].value)
        assert np.array_equal(prm.adam_v, m2.parameters()[k].adam_v)
    assert np.array_equal(m.forward(tok, False).outputs, m2.forward(tok, False).outputs)
    with pytest.raises(ValueError, match="mismatch"):
        RsnModel(ne + 1, nr, TrainConfig(dim=8)).load_arrays(nn_arrays(p))


def nn_arrays(p):
    from skipwalk.nn import load_archive
    return load_archive(p)[0]


def test_score_objects():
    ne, nr = 15, 4
    m = RsnModel(ne, nr, TrainConfig(dim=8))
    s = m.score_objects([0, 3, 7], [1, 1, 2])
    assert s.shape == (3, ne)
    tok = np.array([[3, ne + 1]])
    ref = m.forward(tok, train=False).outputs[0, 1] @ m.ent_W.value + m.ent_b.value
    assert np.allclose(s[1], ref, atol=1e-5)
