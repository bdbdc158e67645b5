import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import random_circuit
from uditqc.circuit import Circuit, GateKind, gate
from uditqc.codec import (COMPILE_VOCAB, ENTANGLEMENT_VOCAB, CapacityError, EmbeddingTable,
                          ErrorCircuit, GateVocabulary, build_embedding_table, decode,
                          decode_circuit, detokenize, embed, encode_circuit, tokenize)

VOCAB = COMPILE_VOCAB
TABLE = build_embedding_table(VOCAB, 3)
PAD = VOCAB.padding_id


def test_vocabulary_ids():
    v = ENTANGLEMENT_VOCAB
    assert (v.background_id, v.token_id(GateKind.H), v.token_id(GateKind.CX), v.padding_id) == (0, 1, 2, 3)
    assert v.dim == 4
    assert v.kind_of(2) is GateKind.CX
    with pytest.raises(ValueError):
        GateVocabulary.of(["h", "h"])


@pytest.mark.parametrize("seed", [0, 1, 12345])
def test_table_is_orthonormal(seed):
    rows = build_embedding_table(VOCAB, seed).rows
    np.testing.assert_allclose(rows @ rows.T, np.eye(VOCAB.dim), atol=1e-9)


def test_table_seeding(tmp_path):
    a, b, c = (build_embedding_table(VOCAB, s).rows for s in (5, 5, 6))
    np.testing.assert_array_equal(a, b)
    assert np.abs(a - c).max() > 1e-6
    path = tmp_path / "table.json"
    TABLE.save(path)
    loaded = EmbeddingTable.load(path)
    np.testing.assert_array_equal(loaded.rows, TABLE.rows)
    assert loaded.vocab == VOCAB


def test_tokenize_examples():
    v = ENTANGLEMENT_VOCAB
    np.testing.assert_array_equal(tokenize(Circuit(3), v, 3, 4), np.full((3, 4), 3))
    tok = tokenize(Circuit(2, (gate("h", 0),)), v, 2, 2)
    np.testing.assert_array_equal(tok, [[1, 3], [0, 3]])
    tok = tokenize(Circuit(2, (gate("cx", 0, 1),)), v, 2, 1)
    np.testing.assert_array_equal(tok[:, 0], [-2, 2])
    # rows beyond the circuit's width are padding even in gate columns
    tok = tokenize(Circuit(2, (gate("h", 1),)), v, 3, 2)
    np.testing.assert_array_equal(tok, [[0, 3], [1, 3], [3, 3]])


def test_tokenize_capacity():
    c = Circuit(3, (gate("h", 0),) * 3)
    with pytest.raises(CapacityError):
        tokenize(c, VOCAB, 2, 8)
    with pytest.raises(CapacityError):
        tokenize(c, VOCAB, 3, 2)
    with pytest.raises(ValueError):
        tokenize(Circuit(2, (gate("z", 0),)), ENTANGLEMENT_VOCAB, 2, 2)


def test_embed_sign_rule():
    k = VOCAB.token_id(GateKind.CX)
    x = embed(np.array([[0, -k, k]]), TABLE)
    np.testing.assert_array_equal(x[0, 0], TABLE.rows[0])
    np.testing.assert_array_equal(x[0, 1], -TABLE.rows[k])
    np.testing.assert_array_equal(x[0, 2], TABLE.rows[k])
    assert decode(-TABLE.rows[k], TABLE) == -k
    with pytest.raises(ValueError):
        embed(np.array([[PAD + 1]]), TABLE)


def test_decode_special_rows_ignore_sign():
    assert decode(-TABLE.rows[0], TABLE) == 0
    assert decode(-TABLE.rows[PAD], TABLE) == PAD
    assert decode(np.zeros(VOCAB.dim), TABLE) == 0
    with pytest.raises(ValueError):
        decode(np.full(VOCAB.dim, np.nan), TABLE)


token_grids = hnp.arrays(np.int64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                         elements=st.integers(-PAD, PAD))


@settings(max_examples=200, deadline=None)
@given(token_grids, st.floats(1e-3, 1e3))
def test_decode_is_scale_invariant(tokens, scale):
    x = embed(tokens, TABLE)
    np.testing.assert_array_equal(decode(scale * x, TABLE), decode(x, TABLE))


@settings(max_examples=300, deadline=None)
@given(token_grids)
def test_detokenize_never_crashes(tokens):
    # arbitrary ids and signs: every grid resolves to a circuit or a typed error
    out = detokenize(decode(embed(tokens, TABLE), TABLE), VOCAB)
    assert isinstance(out, (Circuit, ErrorCircuit))
    if isinstance(out, ErrorCircuit):
        assert out.reason in ErrorCircuit.REASONS


@st.composite
def circuits(draw_):
    seed = draw_(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    n = draw_(st.integers(3, 8))
    return random_circuit(rng, n, draw_(st.integers(1, 24)))


@settings(max_examples=300, deadline=None)
@given(circuits(), st.integers(0, 2), st.integers(0, 4))
def test_roundtrip_is_exact(c, extra_rows, extra_cols):
    Q, T = c.num_qubits + extra_rows, len(c) + extra_cols
    tokens = tokenize(c, VOCAB, Q, T)
    assert (decode(embed(tokens, TABLE), TABLE) == tokens).all()
    assert detokenize(tokens, VOCAB) == c
    assert decode_circuit(encode_circuit(c, TABLE, Q, T), TABLE) == c


def test_roundtrip_survives_uniform_noise():
    rng = np.random.default_rng(1)
    bound = 0.3 / np.sqrt(VOCAB.dim)
    for _ in range(200):
        c = random_circuit(rng, int(rng.integers(3, 9)), int(rng.integers(1, 20)))
        x = encode_circuit(c, TABLE, 8, 20)
        x = x + rng.uniform(-bound, bound, size=x.shape)
        assert decode_circuit(x, TABLE) == c


def test_empty_grid():
    tokens = tokenize(Circuit(2), VOCAB, 4, 3)
    assert detokenize(tokens, VOCAB) == Circuit(4)
    assert detokenize(tokens, VOCAB, num_qubits=2) == Circuit(2)


def _col(*values):
    return np.array(values, dtype=np.int64)[:, None]


H, CX, CCX, SWAP = (VOCAB.token_id(GateKind.parse(k)) for k in ("h", "cx", "ccx", "swap"))


@pytest.mark.parametrize("tokens,reason", [
    (_col(H, H), "wrong-node-pattern"),
    (_col(-CX, 0, 0), "wrong-node-pattern"),
    (_col(CX, CX), "wrong-node-pattern"),
    (_col(-CCX, CCX, 0), "wrong-node-pattern"),
    (_col(SWAP, -SWAP), "wrong-node-pattern"),
    (_col(0, 0, 0), "wrong-node-pattern"),
    (_col(-PAD, 0, H), "wrong-node-pattern"),
    (_col(H, -CX, CX), "mixed-ids-in-column"),
    (_col(H, PAD, 0), "padding-mixed-with-gate"),
    (np.array([[H, PAD, H], [0, PAD, 0]]), "gate-after-termination"),
    (np.array([[H, H], [0, 0], [0, PAD]]), "row-padding-inconsistent"),
])
def test_error_circuits(tokens, reason):
    out = detokenize(tokens, VOCAB)
    assert isinstance(out, ErrorCircuit)
    assert out.reason == reason
    assert out.to_json()["error"] == reason


def test_error_columns_are_reported():
    tokens = np.array([[H, H, H], [0, H, 0]])
    assert detokenize(tokens, VOCAB) == ErrorCircuit("wrong-node-pattern", 1)


def test_out_of_vocabulary_magnitude():
    with pytest.raises(ValueError):
        detokenize(np.array([[PAD + 1]]), VOCAB)
