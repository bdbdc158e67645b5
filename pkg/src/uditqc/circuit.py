"""Gate-level circuit semantics: simulation, unitaries, Schmidt rank vectors.

Amplitude convention: basis index ``i`` stores qubit ``k``'s bit at bit
position ``k`` (qubit 0 is the least significant bit). The codec, the
dataset labels and every oracle in the test-suite rely on this.
"""
from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

SRV_RANK_TOL = 1e-9
NORM_TOL = 1e-9
MAX_SIM_QUBITS = 12
MAX_UNITARY_QUBITS = 10


class CircuitValidationError(ValueError):
    pass


class GateKind(enum.Enum):
    H = "h"
    X = "x"
    Z = "z"
    CX = "cx"
    SWAP = "swap"
    CCX = "ccx"

    @property
    def arity(self) -> int:
        return _ARITY[self][0]

    @property
    def control_count(self) -> int:
        return _ARITY[self][1]

    @property
    def target_count(self) -> int:
        return self.arity - self.control_count

    @property
    def label(self) -> str:
        return self.value

    @classmethod
    def parse(cls, name: str | GateKind) -> GateKind:
        if isinstance(name, GateKind):
            return name
        try:
            return cls[name.upper()]
        except KeyError:
            raise CircuitValidationError(f"unknown gate kind {name!r}") from None


# (arity, control_count)
_ARITY = {
    GateKind.H: (1, 0),
    GateKind.X: (1, 0),
    GateKind.Z: (1, 0),
    GateKind.CX: (2, 1),
    GateKind.SWAP: (2, 0),
    GateKind.CCX: (3, 2),
}


@dataclass(frozen=True)
class Gate:
    """A gate placement. ``qubits`` lists controls first, then targets.

    Controls and targets are each stored in ascending order: within a role
    every gate of the pool is symmetric (CCX in its controls, SWAP in its
    targets), so this is a canonical form and not a semantic change.
    """

    kind: GateKind
    qubits: tuple[int, ...]

    def __post_init__(self):
        kind = GateKind.parse(self.kind)
        qubits = tuple(int(q) for q in self.qubits)
        if len(qubits) != kind.arity:
            raise CircuitValidationError(
                f"{kind.label} takes {kind.arity} qubits, got {list(qubits)}")
        if len(set(qubits)) != len(qubits):
            raise CircuitValidationError(f"repeated qubit in {kind.label}{list(qubits)}")
        if any(q < 0 for q in qubits):
            raise CircuitValidationError(f"negative qubit index in {list(qubits)}")
        nc = kind.control_count
        qubits = tuple(sorted(qubits[:nc])) + tuple(sorted(qubits[nc:]))
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "qubits", qubits)

    @property
    def controls(self) -> tuple[int, ...]:
        return self.qubits[: self.kind.control_count]

    @property
    def targets(self) -> tuple[int, ...]:
        return self.qubits[self.kind.control_count:]

    def to_json(self) -> dict:
        return {"kind": self.kind.label, "qubits": list(self.qubits)}

    def __str__(self) -> str:
        return f"{self.kind.label}({','.join(map(str, self.qubits))})"


def gate(kind: str | GateKind, *qubits: int) -> Gate:
    return Gate(GateKind.parse(kind), tuple(qubits))


@dataclass(frozen=True)
class Circuit:
    num_qubits: int
    gates: tuple[Gate, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.num_qubits < 1:
            raise CircuitValidationError(f"num_qubits must be >= 1, got {self.num_qubits}")
        gates = tuple(self.gates)
        for g in gates:
            if max(g.qubits) >= self.num_qubits:
                raise CircuitValidationError(
                    f"gate {g} out of range for {self.num_qubits} qubits")
        object.__setattr__(self, "gates", gates)

    def __len__(self) -> int:
        return len(self.gates)

    def with_qubits(self, num_qubits: int) -> Circuit:
        return Circuit(num_qubits, self.gates)

    def to_json(self) -> dict:
        return {"qubits": self.num_qubits, "gates": [g.to_json() for g in self.gates]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"))

    @classmethod
    def from_json(cls, obj: dict) -> Circuit:
        try:
            gates = tuple(Gate(GateKind.parse(g["kind"]), tuple(g["qubits"])) for g in obj["gates"])
            return cls(int(obj["qubits"]), gates)
        except (KeyError, TypeError) as exc:
            raise CircuitValidationError(f"malformed circuit object: {exc}") from exc

    @property
    def canonical_key(self) -> str:
        return self.dumps()

    def __str__(self) -> str:
        return f"Circuit[{self.num_qubits}]({' '.join(map(str, self.gates))})"


# ---------------------------------------------------------------------------
# Gate matrices in the gate-local basis: local bit j belongs to gate.qubits[j].

_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def _permutation_matrix(arity: int, fn) -> np.ndarray:
    dim = 2 ** arity
    m = np.zeros((dim, dim), dtype=complex)
    for i in range(dim):
        m[fn(i), i] = 1
    return m


@lru_cache(maxsize=None)
def _local_matrix(kind: GateKind) -> np.ndarray:
    if kind is GateKind.H:
        m = _H
    elif kind is GateKind.X:
        m = _X
    elif kind is GateKind.Z:
        m = _Z
    elif kind is GateKind.CX:
        m = _permutation_matrix(2, lambda i: i ^ 0b10 if i & 0b01 else i)
    elif kind is GateKind.SWAP:
        m = _permutation_matrix(2, lambda i: ((i & 1) << 1) | (i >> 1))
    elif kind is GateKind.CCX:
        m = _permutation_matrix(3, lambda i: i ^ 0b100 if (i & 0b011) == 0b011 else i)
    else:  # pragma: no cover
        raise AssertionError(kind)
    m = m.copy()
    m.setflags(write=False)
    return m


def gate_matrix(kind: GateKind | str) -> np.ndarray:
    """Matrix of ``kind`` on its own qubits (local bit j = j-th listed qubit)."""
    return _local_matrix(GateKind.parse(kind))


def _apply(psi: np.ndarray, g: Gate, n: int) -> np.ndarray:
    """Apply ``g`` to ``psi`` of shape (2,)*n + batch."""
    a = g.kind.arity
    # C-order reshape puts the most significant local bit first.
    tensor = _local_matrix(g.kind).reshape((2,) * (2 * a))
    axes = [n - 1 - q for q in reversed(g.qubits)]
    out = np.tensordot(tensor, psi, axes=(list(range(a, 2 * a)), axes))
    return np.moveaxis(out, list(range(a)), axes)


def _check_size(circuit: Circuit, limit: int):
    if circuit.num_qubits > limit:
        raise CircuitValidationError(
            f"{circuit.num_qubits} qubits exceeds the supported maximum of {limit}")


def simulate(circuit: Circuit) -> np.ndarray:
    """Statevector after applying ``circuit`` to |0...0>."""
    _check_size(circuit, MAX_SIM_QUBITS)
    n = circuit.num_qubits
    psi = np.zeros((2,) * n, dtype=complex)
    psi[(0,) * n] = 1.0
    for g in circuit.gates:
        psi = _apply(psi, g, n)
    return psi.reshape(-1)


def circuit_unitary(circuit: Circuit) -> np.ndarray:
    _check_size(circuit, MAX_UNITARY_QUBITS)
    n = circuit.num_qubits
    dim = 2 ** n
    u = np.eye(dim, dtype=complex).reshape((2,) * n + (dim,))
    for g in circuit.gates:
        u = _apply(u, g, n)
    return u.reshape(dim, dim)


def compute_srv(state: np.ndarray, num_qubits: int) -> tuple[int, ...]:
    """Schmidt rank vector: rank of every single-qubit reduced density matrix."""
    state = np.asarray(state, dtype=complex).reshape(-1)
    if state.shape[0] != 2 ** num_qubits:
        raise CircuitValidationError(
            f"state of length {state.shape[0]} does not describe {num_qubits} qubits")
    norm = np.linalg.norm(state)
    if abs(norm - 1.0) > NORM_TOL:
        raise CircuitValidationError(f"state is not normalized (norm={norm!r})")
    psi = state.reshape((2,) * num_qubits)
    ranks = []
    for k in range(num_qubits):
        m = np.moveaxis(psi, num_qubits - 1 - k, 0).reshape(2, -1)
        rho = m @ m.conj().T
        ranks.append(int(np.sum(np.linalg.eigvalsh(rho) > SRV_RANK_TOL)))
    return tuple(ranks)


def circuit_srv(circuit: Circuit) -> tuple[int, ...]:
    return compute_srv(simulate(circuit), circuit.num_qubits)


def enumerate_srvs(q: int) -> list[tuple[int, ...]]:
    """All realisable qubit SRVs of length q, lexicographic."""
    if not 1 <= q <= 16:
        raise ValueError(f"q must be in [1, 16], got {q}")
    return [v for v in itertools.product((1, 2), repeat=q) if v.count(2) != 1]


def optimize_circuit(circuit: Circuit) -> Circuit:
    """Cancel identical self-inverse gate pairs until nothing changes.

    Two equal gates cancel when every gate between them acts on qubits
    disjoint from theirs (so they commute past).
    """
    gates = list(circuit.gates)
    changed = True
    while changed:
        changed = False
        for i, g in enumerate(gates):
            support = set(g.qubits)
            for j in range(i + 1, len(gates)):
                h = gates[j]
                if support.isdisjoint(h.qubits):
                    continue
                if h == g:
                    del gates[j]
                    del gates[i]
                    changed = True
                break
            if changed:
                break
    return Circuit(circuit.num_qubits, tuple(gates))


def _check_same_shape(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise CircuitValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")


def frobenius_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Half the squared Frobenius norm of ``a - b``."""
    a, b = np.asarray(a), np.asarray(b)
    _check_same_shape(a, b)
    return 0.5 * float(np.sum(np.abs(a - b) ** 2))


def phase_insensitive_distance(a: np.ndarray, b: np.ndarray) -> float:
    """min over global phases phi of frobenius_distance(a, exp(i phi) b)."""
    a, b = np.asarray(a), np.asarray(b)
    _check_same_shape(a, b)
    na = np.sum(np.abs(a) ** 2)
    nb = np.sum(np.abs(b) ** 2)
    overlap = abs(np.vdot(a, b))
    return max(0.0, 0.5 * float(na + nb - 2 * overlap))


def draw(circuit: Circuit) -> str:
    """ASCII diagram, one column per gate."""
    n = circuit.num_qubits
    rows = [[f"q{q}: "] for q in range(n)]
    width = max(len(r[0]) for r in rows)
    for r in rows:
        r[0] = r[0].ljust(width)
    for g in circuit.gates:
        lo, hi = min(g.qubits), max(g.qubits)
        for q in range(n):
            if q in g.controls:
                cell = "-@-"
            elif q in g.targets:
                cell = {"cx": "-X-", "ccx": "-X-", "swap": "-x-"}.get(
                    g.kind.label, f"-{g.kind.name}-")
            elif lo < q < hi:
                cell = "-|-"
            else:
                cell = "---"
            rows[q].append(cell)
    return "\n".join("".join(r) + "-" for r in rows)
