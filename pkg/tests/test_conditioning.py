import numpy as np
import pytest
import torch

from uditqc.circuit import Circuit, circuit_unitary, gate
from uditqc.conditioning import (Condition, LabelEmbedder, TimestepEmbedder, UEncConfig,
                                 UnitaryEncoder, combine, embed_label, sincos_2d,
                                 timestep_features, unitary_to_tensor)
from uditqc.model import UDiT, UDiTConfig


def random_unitary(dim, rng):
    z = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def test_timestep_features():
    f = timestep_features(torch.tensor([0, 1, 1, 999]))
    assert f.shape == (4, 256)
    assert not torch.equal(f[0], f[1])
    assert torch.equal(f[1], f[2])
    assert f.abs().max() <= 1


def test_timestep_embedder_range():
    emb = TimestepEmbedder(16, 100)
    assert emb(torch.tensor([0, 99])).shape == (2, 16)
    with pytest.raises(ValueError):
        emb(torch.tensor([100]))


def test_label_dropout_extremes():
    labels = torch.arange(5).repeat(20)
    for p, expect_null in ((0.0, False), (1.0, True)):
        emb = LabelEmbedder(5, 8, dropout_p=p)
        out = embed_label(labels, emb, training=True, generator=torch.Generator().manual_seed(0))
        null_row = emb.table.weight[emb.null_index]
        is_null = (out == null_row).all(dim=1)
        assert bool(is_null.all()) is expect_null
        if not expect_null:
            assert torch.equal(out, emb.table(labels))
    with pytest.raises(ValueError):
        LabelEmbedder(5, 8, dropout_p=1.5)


def test_label_dropout_rate():
    emb = LabelEmbedder(5, 8, dropout_p=0.1)
    mask = emb.drop_mask(torch.zeros(10_000, dtype=torch.long), torch.Generator().manual_seed(3))
    assert abs(mask.float().mean().item() - 0.1) < 0.01
    # no dropout outside training
    labels = torch.arange(5)
    assert torch.equal(embed_label(labels, emb, training=False), emb.table(labels))


def test_null_label_uses_the_same_path():
    emb = LabelEmbedder(5, 8)
    labels = torch.tensor([0, 3])
    drop = torch.tensor([True, False])
    out = emb(labels, drop)
    assert torch.equal(out[0], emb(torch.tensor([emb.null_index]))[0])
    assert torch.equal(out[1], emb(torch.tensor([3]))[0])


def test_sincos_2d():
    pe = sincos_2d(8, 32)
    assert pe.shape == (32, 8, 8)
    flat = pe.flatten(1).T
    assert len({tuple(r.tolist()) for r in flat}) == 64
    with pytest.raises(ValueError):
        sincos_2d(8, 30)


@pytest.fixture
def encoder():
    torch.manual_seed(0)
    return UnitaryEncoder(UEncConfig(qubits=3, channels=(16, 32), heads=2), cond_dim=24).eval()


def test_unitary_encoder_shape_and_determinism(encoder):
    u = circuit_unitary(Circuit(3, (gate("h", 0), gate("cx", 0, 2))))
    x = unitary_to_tensor(u)
    assert x.shape == (1, 2, 8, 8)
    a, b = encoder(x), encoder(x)
    assert a.shape == (1, 24)
    assert torch.equal(a, b)
    complex_in = torch.from_numpy(u[None]).to(torch.complex64)
    torch.testing.assert_close(encoder(complex_in), a)
    with pytest.raises(ValueError):
        encoder(torch.zeros(1, 2, 4, 4))


def test_unitary_encoder_is_position_sensitive(encoder):
    rng = np.random.default_rng(0)
    for _ in range(5):
        u = random_unitary(8, rng)
        base = encoder(unitary_to_tensor(u))
        assert not torch.allclose(encoder(unitary_to_tensor(u.conj().T)), base, atol=1e-6)
        shuffled = rng.permutation(u.reshape(-1)).reshape(8, 8)
        assert not torch.allclose(encoder(unitary_to_tensor(shuffled)), base, atol=1e-6)


def test_unitary_encoder_dropout_only_in_training(encoder):
    x = unitary_to_tensor(random_unitary(8, np.random.default_rng(1)))
    encoder.train()
    torch.manual_seed(1)
    a = encoder(x)
    b = encoder(x)
    assert not torch.equal(a, b)
    encoder.eval()
    assert torch.equal(encoder(x), encoder(x))


def test_combine():
    t, y = torch.randn(3, 8), torch.randn(3, 8)
    assert torch.equal(combine(t, y), t + y)
    assert torch.equal(combine(torch.zeros(3, 8), y), y)
    proj = torch.nn.Linear(16, 8)
    assert combine(t, y, torch.randn(3, 8), proj).shape == (3, 8)
    with pytest.raises(ValueError):
        combine(t, y, torch.randn(3, 8))
    with pytest.raises(ValueError):
        combine(t, torch.randn(3, 4))


def test_null_rows_ignore_the_unitary():
    cfg = UDiTConfig(Q=3, T=4, d=8, num_classes=63, hidden=16, depths=(1,) * 5,
                     heads=(2,) * 5, unitary=UEncConfig(channels=(8, 16), heads=2))
    torch.manual_seed(0)
    model = UDiT(cfg).eval()
    rng = np.random.default_rng(2)
    u1 = unitary_to_tensor(random_unitary(8, rng))
    u2 = unitary_to_tensor(random_unitary(8, rng))
    t = torch.tensor([5])
    labels = torch.tensor([4])
    null1 = Condition(labels, u1).as_null(model.null_index)
    null2 = Condition(labels, u2).as_null(model.null_index)
    assert torch.equal(model.condition(t, null1), model.condition(t, null2))
    c1, c2 = model.condition(t, Condition(labels, u1)), model.condition(t, Condition(labels, u2))
    assert not torch.equal(c1, c2)


def test_condition_select():
    cond = Condition(torch.arange(4), torch.randn(4, 2, 8, 8), torch.tensor([1, 0, 0, 1]).bool())
    sub = cond.select(torch.tensor([3, 0]))
    assert sub.labels.tolist() == [3, 0]
    assert sub.null.tolist() == [True, True]
    assert len(sub) == 2
