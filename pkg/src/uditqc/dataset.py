"""Random circuit datasets for SRV generation and unitary compilation."""
from __future__ import annotations

import hashlib
import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .circuit import (Circuit, Gate, GateKind, circuit_srv, circuit_unitary,
                      enumerate_srvs, optimize_circuit)

log = logging.getLogger(__name__)

ENTANGLEMENT_POOL = ("h", "cx")
COMPILE_POOL = ("h", "cx", "z", "x", "ccx", "swap")

# Stream chunk size; chunk k of a run always draws from rng([seed, k]) so the
# output does not depend on how many workers produced the chunks.
CHUNK = 512


class DatasetError(ValueError):
    pass


@dataclass
class DatasetSpec:
    task: str  # "srv" | "compile"
    gate_pool: list[str]
    qubits: int
    min_gates: int
    max_gates: int
    balanced_size: int
    seed: int
    attempt_factor: int = 200
    # compile task: a subset stops once this many draws in a row found nothing new
    stall_patience: int = 5000

    def __post_init__(self):
        if self.task not in ("srv", "compile"):
            raise DatasetError(f"task must be 'srv' or 'compile', got {self.task!r}")
        self.gate_pool = [GateKind.parse(k).label for k in self.gate_pool]
        if self.min_gates < 0 or self.min_gates > self.max_gates:
            raise DatasetError(f"need 0 <= min_gates <= max_gates, got {self.min_gates}, {self.max_gates}")
        if self.balanced_size < 1:
            raise DatasetError("balanced_size must be >= 1")
        too_wide = [k for k in self.kinds if k.arity > self.qubits]
        if too_wide:
            raise DatasetError(f"gates {[k.label for k in too_wide]} need more than {self.qubits} qubits")

    @property
    def kinds(self) -> list[GateKind]:
        return [GateKind.parse(k) for k in self.gate_pool]

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> DatasetSpec:
        return cls(**obj)


# Reference dataset sizes; the desk presets keep the same structure at smaller sizes.
REFERENCE_PRESETS = {
    "srv3": DatasetSpec("srv", list(ENTANGLEMENT_POOL), 3, 2, 16, 40000, 0),
    "srv4": DatasetSpec("srv", list(ENTANGLEMENT_POOL), 4, 3, 20, 25000, 0),
    "srv5": DatasetSpec("srv", list(ENTANGLEMENT_POOL), 5, 4, 28, 17000, 0),
    "srv6": DatasetSpec("srv", list(ENTANGLEMENT_POOL), 6, 5, 40, 8100, 0),
    "srv7": DatasetSpec("srv", list(ENTANGLEMENT_POOL), 7, 6, 52, 4000, 0),
    "srv8": DatasetSpec("srv", list(ENTANGLEMENT_POOL), 8, 7, 52, 2100, 0),
    "compile3": DatasetSpec("compile", list(COMPILE_POOL), 3, 2, 12, 20000, 0),
}


@dataclass(frozen=True)
class GateSubsetLabel:
    index: int
    kinds: tuple[GateKind, ...]

    @property
    def names(self) -> list[str]:
        return [k.label for k in self.kinds]


def enumerate_gate_subsets(pool: Sequence[str | GateKind]) -> list[GateSubsetLabel]:
    """Non-empty subsets ordered by membership bitmask (bit i = pool[i])."""
    kinds = [GateKind.parse(k) for k in pool]
    if len(kinds) > 16:
        raise DatasetError("gate pool too large to enumerate")
    out = []
    for mask in range(1, 2 ** len(kinds)):
        members = tuple(k for i, k in enumerate(kinds) if mask >> i & 1)
        out.append(GateSubsetLabel(mask - 1, members))
    return out


@dataclass
class CircuitRecord:
    circuit: Circuit
    label: int
    srv: tuple[int, ...] | None = None
    unitary: np.ndarray | None = field(default=None, repr=False)

    @property
    def canonical_key(self) -> str:
        return self.circuit.canonical_key

    def to_json(self) -> dict:
        obj = {"circuit": self.circuit.to_json(), "label": self.label}
        if self.srv is not None:
            obj["srv"] = list(self.srv)
        if self.unitary is not None:
            u = self.unitary
            obj["unitary"] = np.stack([u.real, u.imag], axis=-1).tolist()
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> CircuitRecord:
        srv = tuple(obj["srv"]) if "srv" in obj else None
        unitary = None
        if "unitary" in obj:
            arr = np.asarray(obj["unitary"], dtype=np.float64)
            unitary = arr[..., 0] + 1j * arr[..., 1]
        return cls(Circuit.from_json(obj["circuit"]), int(obj["label"]), srv, unitary)

    def __eq__(self, other):
        if not isinstance(other, CircuitRecord):
            return NotImplemented
        if (self.circuit, self.label, self.srv) != (other.circuit, other.label, other.srv):
            return False
        if (self.unitary is None) != (other.unitary is None):
            return False
        return self.unitary is None or np.array_equal(self.unitary, other.unitary)


def sample_random_circuit(spec: DatasetSpec, rng: np.random.Generator,
                          kinds: Sequence[GateKind] | None = None) -> Circuit:
    kinds = list(kinds) if kinds is not None else spec.kinds
    for k in kinds:
        if k.arity > spec.qubits:
            raise DatasetError(f"{k.label} needs {k.arity} qubits, spec has {spec.qubits}")
    n_gates = int(rng.integers(spec.min_gates, spec.max_gates + 1))
    gates = []
    for _ in range(n_gates):
        kind = kinds[int(rng.integers(len(kinds)))]
        qubits = rng.choice(spec.qubits, size=kind.arity, replace=False)
        gates.append(Gate(kind, tuple(int(q) for q in qubits)))
    return Circuit(spec.qubits, tuple(gates))


def _chunk_rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, *stream])


def _srv_chunk(args) -> list[tuple[Circuit, tuple[int, ...]]]:
    spec, k = args
    rng = _chunk_rng(spec.seed, k)
    out = []
    for _ in range(CHUNK):
        c = optimize_circuit(sample_random_circuit(spec, rng))
        out.append((c, circuit_srv(c)))
    return out


def _chunks(fn, spec, start: int, count: int, workers: int):
    jobs = [(spec, k) for k in range(start, start + count)]
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(fn, jobs))


def generate_srv_dataset(spec: DatasetSpec, workers: int = 1) -> list[CircuitRecord]:
    """Balanced SRV dataset: every class of enumerate_srvs(q) gets balanced_size circuits.

    On an exhausted attempt budget the partial dataset is returned and a
    warning lists the per-class shortfall.
    """
    if spec.task != "srv":
        raise DatasetError("generate_srv_dataset needs task='srv'")
    srvs = enumerate_srvs(spec.qubits)
    index = {v: i for i, v in enumerate(srvs)}
    buckets: list[list[Circuit]] = [[] for _ in srvs]
    seen: set[str] = set()
    budget = spec.attempt_factor * spec.balanced_size * len(srvs)
    attempts = 0
    next_chunk = 0
    batch = max(1, workers)
    while attempts < budget and any(len(b) < spec.balanced_size for b in buckets):
        for chunk in _chunks(_srv_chunk, spec, next_chunk, batch, workers):
            for c, srv in chunk:
                if attempts >= budget:
                    break
                attempts += 1
                key = c.canonical_key
                label = index[srv]
                if key in seen or len(buckets[label]) >= spec.balanced_size:
                    continue
                seen.add(key)
                buckets[label].append(c)
        next_chunk += batch
    counts = [len(b) for b in buckets]
    if min(counts) < spec.balanced_size:
        warnings.warn(f"attempt budget exhausted after {attempts} draws; per-class counts "
                      f"{dict(zip(map(str, srvs), counts))}", RuntimeWarning, stacklevel=2)
    records = [CircuitRecord(c, i, srvs[i]) for i, b in enumerate(buckets) for c in b]
    return _shuffled(records, spec.seed)


def _subset_circuits(spec: DatasetSpec, subset: GateSubsetLabel) -> list[Circuit]:
    rng = _chunk_rng(spec.seed, 1_000_000 + subset.index)
    found: dict[str, Circuit] = {}
    budget = spec.attempt_factor * spec.balanced_size
    stall = 0
    for _ in range(budget):
        c = optimize_circuit(sample_random_circuit(spec, rng, subset.kinds))
        key = c.canonical_key
        if key in found:
            stall += 1
            if stall >= spec.stall_patience:
                break
            continue
        stall = 0
        found[key] = c
        if len(found) >= spec.balanced_size:
            break
    return list(found.values())


def _compile_job(args):
    spec, subset = args
    return _subset_circuits(spec, subset)


def generate_compile_dataset(spec: DatasetSpec, workers: int = 1) -> list[CircuitRecord]:
    """Per gate subset, up to balanced_size distinct optimized circuits built from that subset."""
    if spec.task != "compile":
        raise DatasetError("generate_compile_dataset needs task='compile'")
    subsets = enumerate_gate_subsets(spec.gate_pool)
    jobs = [(spec, s) for s in subsets]
    if workers <= 1:
        per_subset = [_compile_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(workers) as pool:
            per_subset = list(pool.map(_compile_job, jobs))
    seen: set[str] = set()
    records = []
    # A circuit drawn under several subsets keeps the first (smallest) label.
    for subset, circuits in zip(subsets, per_subset):
        for c in circuits:
            if c.canonical_key in seen:
                continue
            seen.add(c.canonical_key)
            records.append(CircuitRecord(c, subset.index, None, circuit_unitary(c)))
    return _shuffled(records, spec.seed)


def generate_dataset(spec: DatasetSpec, workers: int = 1) -> list[CircuitRecord]:
    if spec.task == "srv":
        return generate_srv_dataset(spec, workers)
    return generate_compile_dataset(spec, workers)


def _shuffled(records: list[CircuitRecord], seed: int) -> list[CircuitRecord]:
    order = np.random.default_rng([seed, 0xD5]).permutation(len(records))
    return [records[i] for i in order]


def class_counts(records: Iterable[CircuitRecord], num_classes: int) -> list[int]:
    counts = [0] * num_classes
    for r in records:
        counts[r.label] += 1
    return counts


# ---------------------------------------------------------------------------
# JSONL persistence


class DatasetFormatError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


def write_dataset(path: str | Path, records: Iterable[CircuitRecord]) -> str:
    """Write JSONL; returns the sha256 of the written bytes."""
    h = hashlib.sha256()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            line = json.dumps(r.to_json(), separators=(",", ":")) + "\n"
            h.update(line.encode())
            fh.write(line)
    return h.hexdigest()


def read_dataset(path: str | Path) -> list[CircuitRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(CircuitRecord.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetFormatError(path, lineno, str(exc)) from exc
    return records


def label_names(spec: DatasetSpec) -> list[str]:
    if spec.task == "srv":
        return ["[" + ",".join(map(str, v)) + "]" for v in enumerate_srvs(spec.qubits)]
    return [",".join(s.names) for s in enumerate_gate_subsets(spec.gate_pool)]


def build_manifest(spec: DatasetSpec, records: Sequence[CircuitRecord], content_hash: str) -> dict:
    names = label_names(spec)
    counts = class_counts(records, len(names))
    manifest = {
        "spec": spec.to_json(),
        "seed": spec.seed,
        "num_classes": len(names),
        "labels": names,
        "class_counts": counts,
        "total": len(records),
        "sha256": content_hash,
    }
    if spec.task == "compile":
        manifest["distinct_unitaries"] = len({
            np.round(r.unitary, 9).tobytes() for r in records})
    return manifest
