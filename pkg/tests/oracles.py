"""Independent reference implementations used as test oracles.

Nothing here calls into the package's simulation or codec code: gate actions
are written out basis state by basis state, reduced density matrices are
summed explicitly, and eigenvalues come from the 2x2 closed form.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
import torch

from uditqc.circuit import Circuit, Gate, GateKind

SQ = 1 / math.sqrt(2)


def _bit(i: int, q: int) -> int:
    return (i >> q) & 1


def _flip(i: int, q: int) -> int:
    return i ^ (1 << q)


def dense_gate(g: Gate, n: int) -> np.ndarray:
    """Full 2^n matrix of ``g`` built column by column from the gate's action."""
    dim = 2 ** n
    m = np.zeros((dim, dim), dtype=complex)
    for i in range(dim):
        k = g.kind
        if k is GateKind.H:
            (q,) = g.qubits
            m[i & ~(1 << q), i] += SQ
            m[i | (1 << q), i] += -SQ if _bit(i, q) else SQ
        elif k is GateKind.X:
            m[_flip(i, g.qubits[0]), i] = 1
        elif k is GateKind.Z:
            m[i, i] = -1 if _bit(i, g.qubits[0]) else 1
        elif k is GateKind.CX:
            c, t = g.qubits
            m[_flip(i, t) if _bit(i, c) else i, i] = 1
        elif k is GateKind.CCX:
            c1, c2, t = g.qubits
            m[_flip(i, t) if _bit(i, c1) and _bit(i, c2) else i, i] = 1
        elif k is GateKind.SWAP:
            a, b = g.qubits
            j = i
            if _bit(i, a) != _bit(i, b):
                j = _flip(_flip(i, a), b)
            m[j, i] = 1
    return m


def dense_unitary(c: Circuit) -> np.ndarray:
    u = np.eye(2 ** c.num_qubits, dtype=complex)
    for g in c.gates:
        u = dense_gate(g, c.num_qubits) @ u
    return u


def dense_state(c: Circuit) -> np.ndarray:
    return dense_unitary(c)[:, 0]


def reduced_density(state: np.ndarray, n: int, k: int) -> np.ndarray:
    rho = np.zeros((2, 2), dtype=complex)
    for i in range(2 ** n):
        if _bit(i, k):
            continue
        j = _flip(i, k)
        amps = (state[i], state[j])
        for a in range(2):
            for b in range(2):
                rho[a, b] += amps[a] * np.conj(amps[b])
    return rho


def eig2_count(rho: np.ndarray, tol: float = 1e-9) -> int:
    tr = (rho[0, 0] + rho[1, 1]).real
    det = (rho[0, 0] * rho[1, 1] - rho[0, 1] * rho[1, 0]).real
    disc = math.sqrt(max(tr * tr - 4 * det, 0.0))
    return sum(lam > tol for lam in ((tr + disc) / 2, (tr - disc) / 2))


def srv_oracle(state: np.ndarray, n: int) -> tuple[int, ...]:
    return tuple(eig2_count(reduced_density(state, n, k)) for k in range(n))


def srv_list_oracle(q: int) -> list[tuple[int, ...]]:
    """Lexicographic {1,2}^q minus the vectors with a single 2, by counting up in base 2."""
    out = []
    for m in range(2 ** q):
        v = tuple(1 + ((m >> (q - 1 - i)) & 1) for i in range(q))
        if sum(x == 2 for x in v) != 1:
            out.append(v)
    return out


def random_circuit(rng: np.random.Generator, n: int, length: int,
                   kinds=tuple(GateKind)) -> Circuit:
    kinds = [k for k in kinds if k.arity <= n]
    gates = []
    for _ in range(length):
        k = kinds[rng.integers(len(kinds))]
        gates.append(Gate(k, tuple(int(x) for x in rng.choice(n, size=k.arity, replace=False))))
    return Circuit(n, tuple(gates))


def h_only_optimized(n: int, lengths) -> set[str]:
    """Every H-only circuit with a length in ``lengths`` that has no adjacent
    repeated gate on a qubit, i.e. the optimizer's fixpoints, as canonical keys."""
    out = set()
    for length in lengths:
        for qs in itertools.product(range(n), repeat=length):
            # H gates on different qubits commute, so a fixpoint has at most one per qubit
            if len(set(qs)) == length:
                out.add(Circuit(n, tuple(Gate(GateKind.H, (q,)) for q in qs)).canonical_key)
    return out


class OracleDenoiser:
    """Closed-form noise predictor that points every sample at ``target``."""

    null_index = 0

    def __init__(self, target: torch.Tensor, alpha_bar: np.ndarray):
        self.target = target
        self.alpha_bar = torch.as_tensor(alpha_bar, dtype=target.dtype)

    def __call__(self, x, t, cond):
        ab = self.alpha_bar[t].to(x.dtype).view(-1, *([1] * (x.dim() - 1)))
        return (x - ab.sqrt() * self.target.to(x.dtype)) / (1 - ab).sqrt()


class ConstantDenoiser:
    null_index = 0

    def __init__(self, value: float = 0.0):
        self.value = value

    def __call__(self, x, t, cond):
        return torch.full_like(x, self.value)
