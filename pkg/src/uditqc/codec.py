"""Circuit <-> token matrix <-> continuous tensor.

Token ids: 0 is background (no gate on this cell), 1..N are the gate kinds of
the vocabulary, N+1 is padding (cell outside the active circuit). A control
node carries the negated id of its gate, a target node the positive id.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .circuit import Circuit, Gate, GateKind


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class GateVocabulary:
    kinds: tuple[GateKind, ...]

    def __post_init__(self):
        kinds = tuple(GateKind.parse(k) for k in self.kinds)
        if not kinds:
            raise ValueError("vocabulary needs at least one gate kind")
        if len(set(kinds)) != len(kinds):
            raise ValueError(f"duplicate gate kinds in {kinds}")
        object.__setattr__(self, "kinds", kinds)

    @classmethod
    def of(cls, names: Sequence[str | GateKind]) -> GateVocabulary:
        return cls(tuple(GateKind.parse(n) for n in names))

    @property
    def n_gates(self) -> int:
        return len(self.kinds)

    @property
    def background_id(self) -> int:
        return 0

    @property
    def padding_id(self) -> int:
        return len(self.kinds) + 1

    @property
    def dim(self) -> int:
        return len(self.kinds) + 2

    def token_id(self, kind: GateKind) -> int:
        return self.kinds.index(kind) + 1

    def kind_of(self, token_id: int) -> GateKind:
        return self.kinds[token_id - 1]

    @property
    def names(self) -> list[str]:
        return [k.label for k in self.kinds]


ENTANGLEMENT_VOCAB = GateVocabulary.of(["h", "cx"])
COMPILE_VOCAB = GateVocabulary.of(["h", "cx", "z", "x", "ccx", "swap"])


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    vocab: GateVocabulary
    seed: int
    rows: np.ndarray  # (N+2, N+2), row i embeds token id i

    def to_json(self) -> dict:
        return {"seed": self.seed, "vocab": self.vocab.names, "rows": self.rows.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> EmbeddingTable:
        rows = np.asarray(obj["rows"], dtype=np.float64)
        rows.setflags(write=False)
        return cls(GateVocabulary.of(obj["vocab"]), int(obj["seed"]), rows)

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> EmbeddingTable:
        return cls.from_json(json.loads(Path(path).read_text()))


def build_embedding_table(vocab: GateVocabulary, seed: int) -> EmbeddingTable:
    """Orthonormal rows from the QR factorisation of a seeded Gaussian matrix."""
    d = vocab.dim
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))  # unique Haar-distributed factor
    rows = np.ascontiguousarray(q.T)
    rows.setflags(write=False)
    return EmbeddingTable(vocab, int(seed), rows)


def tokenize(circuit: Circuit, vocab: GateVocabulary, Q: int, T: int) -> np.ndarray:
    if circuit.num_qubits > Q or len(circuit) > T:
        raise CapacityError(
            f"circuit with {circuit.num_qubits} qubits and {len(circuit)} gates "
            f"does not fit a {Q}x{T} canvas")
    tokens = np.full((Q, T), vocab.padding_id, dtype=np.int64)
    n = circuit.num_qubits
    for t, g in enumerate(circuit.gates):
        if g.kind not in vocab.kinds:
            raise ValueError(f"gate {g} not in vocabulary {vocab.names}")
        k = vocab.token_id(g.kind)
        tokens[:n, t] = 0
        tokens[list(g.controls), t] = -k
        tokens[list(g.targets), t] = k
    return tokens


def embed(tokens: np.ndarray, table: EmbeddingTable) -> np.ndarray:
    """Token grid (..., Q, T) -> tensor (..., Q, T, d); negative ids flip the row."""
    tokens = np.asarray(tokens)
    mag = np.abs(tokens)
    if mag.max(initial=0) >= table.rows.shape[0]:
        raise ValueError(f"token id {int(mag.max())} outside vocabulary")
    sign = np.where(tokens < 0, -1.0, 1.0)
    return table.rows[mag] * sign[..., None]


def decode(tensor: np.ndarray, table: EmbeddingTable) -> np.ndarray:
    """Nearest embedding by |cosine similarity|; the sign picks control vs target.

    Ties go to the smaller token id; an all-zero cell decodes to background.
    """
    x = np.asarray(tensor, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("decode needs finite values")
    sims = x @ table.rows.T  # rows are unit vectors
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    cos = np.divide(sims, norms, out=np.zeros_like(sims), where=norms > 0)
    k = np.argmax(np.abs(cos), axis=-1)
    chosen = np.take_along_axis(cos, k[..., None], axis=-1)[..., 0]
    special = (k == 0) | (k == table.vocab.padding_id)
    sign = np.where((chosen < 0) & ~special, -1, 1)
    return (k * sign).astype(np.int64)


@dataclass(frozen=True)
class ErrorCircuit:
    reason: str
    column: int

    REASONS = (
        "mixed-ids-in-column",
        "wrong-node-pattern",
        "padding-mixed-with-gate",
        "gate-after-termination",
        "row-padding-inconsistent",
    )

    def to_json(self) -> dict:
        return {"error": self.reason, "column": self.column}


def detokenize(tokens: np.ndarray, vocab: GateVocabulary,
               num_qubits: int | None = None) -> Circuit | ErrorCircuit:
    """Token grid -> circuit, or an ErrorCircuit naming the first defect.

    The active qubit count is read off the non-padding rows of the gate
    columns. An all-padding grid carries no such information, so it decodes
    to the empty circuit on ``num_qubits`` (default: every row).
    """
    tokens = np.asarray(tokens)
    Q, T = tokens.shape
    pad = vocab.padding_id
    if np.abs(tokens).max(initial=0) > pad:
        raise ValueError(f"token magnitude above padding id {pad}")
    n = num_qubits
    gates = []
    terminated = False
    for t in range(T):
        col = tokens[:, t]
        is_pad = np.abs(col) == pad
        if is_pad.all():
            terminated = True
            continue
        if terminated:
            return ErrorCircuit("gate-after-termination", t)
        if np.any(col == -pad):
            return ErrorCircuit("wrong-node-pattern", t)
        active = int(np.argmax(is_pad)) if is_pad.any() else Q
        if is_pad[active:].sum() != Q - active:
            return ErrorCircuit("padding-mixed-with-gate", t)
        if n is None:
            n = active
        elif active != n:
            return ErrorCircuit("row-padding-inconsistent", t)
        body = col[:n]
        nz = np.flatnonzero(body)
        if nz.size == 0:
            return ErrorCircuit("wrong-node-pattern", t)
        mags = np.unique(np.abs(body[nz]))
        if mags.size != 1:
            return ErrorCircuit("mixed-ids-in-column", t)
        kind = vocab.kind_of(int(mags[0]))
        controls = [int(q) for q in nz if body[q] < 0]
        targets = [int(q) for q in nz if body[q] > 0]
        if len(controls) != kind.control_count or len(targets) != kind.target_count:
            return ErrorCircuit("wrong-node-pattern", t)
        gates.append(Gate(kind, tuple(controls + targets)))
    return Circuit(n if n is not None else Q, tuple(gates))


def encode_circuit(circuit: Circuit, table: EmbeddingTable, Q: int, T: int) -> np.ndarray:
    return embed(tokenize(circuit, table.vocab, Q, T), table)


def decode_circuit(tensor: np.ndarray, table: EmbeddingTable,
                   num_qubits: int | None = None) -> Circuit | ErrorCircuit:
    return detokenize(decode(tensor, table), table.vocab, num_qubits)
