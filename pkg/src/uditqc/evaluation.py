"""Evaluation protocols: SRV generation, masking, editing, unitary compilation."""
from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .circuit import (Circuit, circuit_srv, circuit_unitary, enumerate_srvs, frobenius_distance,
                      phase_insensitive_distance)
from .codec import ErrorCircuit, tokenize
from .dataset import DatasetSpec, enumerate_gate_subsets, sample_random_circuit
from .diffusion import InpaintSpec, SamplerConfig
from .pipeline import CircuitGenerator

EXACT_TOL = 1e-6


def srv_name(srv: Sequence[int]) -> str:
    return "[" + ",".join(map(str, srv)) + "]"


def srv_of(circuit: Circuit, q: int) -> tuple[int, ...] | None:
    """SRV on q qubits; circuits on fewer qubits are padded with idle qubits."""
    if circuit.num_qubits > q:
        return None
    return circuit_srv(circuit.with_qubits(q))


@dataclass
class GenerationReport:
    prompt: str
    label: int
    n_samples: int
    n_valid: int = 0
    n_error: int = 0
    n_match: int = 0
    distinct_count: int = 0
    novel_count: int = 0
    violations: int = 0
    error_reasons: dict[str, int] = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return self.n_match / self.n_samples if self.n_samples else 0.0

    @property
    def error_rate(self) -> float:
        return self.n_error / self.n_samples if self.n_samples else 0.0

    def to_json(self) -> dict:
        out = asdict(self)
        out.update(accuracy=self.accuracy, error_rate=self.error_rate)
        return out


@dataclass
class ConfusionMatrix:
    prompts: list[str]
    classes: list[str]  # produced classes; last column "other" = off-canvas SRV
    counts: np.ndarray
    qubits: int

    def grouped(self) -> tuple[list[int], np.ndarray]:
        """Counts summed by the number of entangled qubits (2-entries) on both axes."""
        srvs = enumerate_srvs(self.qubits)
        groups = sorted({v.count(2) for v in srvs})
        gi = {g: i for i, g in enumerate(groups)}
        out = np.zeros((len(groups), len(groups)), dtype=np.int64)
        for r, pv in enumerate(srvs):
            for c, cv in enumerate(srvs):
                out[gi[pv.count(2)], gi[cv.count(2)]] += self.counts[r, c]
        return groups, out

    def write_csv(self, path: str | Path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["prompt", *self.classes])
            for name, row in zip(self.prompts, self.counts):
                w.writerow([name, *map(int, row)])

    def to_json(self) -> dict:
        groups, grouped = self.grouped()
        return {"prompts": self.prompts, "classes": self.classes, "counts": self.counts.tolist(),
                "groups": groups, "grouped_counts": grouped.tolist()}


@dataclass
class SRVEvaluation:
    reports: list[GenerationReport]
    confusion: ConfusionMatrix

    @property
    def macro_accuracy(self) -> float:
        return float(np.mean([r.accuracy for r in self.reports])) if self.reports else 0.0

    @property
    def micro_accuracy(self) -> float:
        n = sum(r.n_samples for r in self.reports)
        return sum(r.n_match for r in self.reports) / n if n else 0.0

    @property
    def error_rate(self) -> float:
        n = sum(r.n_samples for r in self.reports)
        return sum(r.n_error for r in self.reports) / n if n else 0.0

    def to_json(self) -> dict:
        return {
            "macro_accuracy": self.macro_accuracy,
            "micro_accuracy": self.micro_accuracy,
            "error_rate": self.error_rate,
            "reports": [r.to_json() for r in self.reports],
            "confusion": self.confusion.to_json(),
        }


def _tally(report: GenerationReport, results: Iterable[Circuit | ErrorCircuit], q: int,
           target: tuple[int, ...] | None, train_keys: set[str] | None,
           produced: list | None = None, accept=None) -> GenerationReport:
    reasons: Counter = Counter()
    keys = set()
    for res in results:
        if isinstance(res, ErrorCircuit):
            report.n_error += 1
            reasons[res.reason] += 1
            if produced is not None:
                produced.append(None)
            continue
        report.n_valid += 1
        keys.add(res.canonical_key)
        srv = srv_of(res, q)
        if produced is not None:
            produced.append(srv)
        ok = srv is not None and (target is None or srv == target)
        if ok and accept is not None:
            ok = accept(res)
        report.n_match += int(ok)
    report.distinct_count = len(keys)
    report.novel_count = len(keys - train_keys) if train_keys is not None else len(keys)
    report.error_reasons = dict(sorted(reasons.items()))
    return report


def _generator(seed: int, *stream: int) -> torch.Generator:
    s = np.random.SeedSequence([seed, *stream]).generate_state(1, dtype=np.uint64)[0]
    return torch.Generator().manual_seed(int(s))


def eval_srv(gen: CircuitGenerator, sampler: SamplerConfig, n: int = 1024, seed: int = 0,
             train_keys: set[str] | None = None,
             prompts: Sequence[int] | None = None) -> SRVEvaluation:
    """Sample ``n`` circuits per SRV prompt and check each against its prompt."""
    q = gen.qubits
    srvs = enumerate_srvs(q)
    prompts = list(range(len(srvs))) if prompts is None else list(prompts)
    index = {v: i for i, v in enumerate(srvs)}
    counts = np.zeros((len(prompts), len(srvs) + 1), dtype=np.int64)
    reports = []
    for row, label in enumerate(prompts):
        tensors = gen.sample_tensors(label, n, sampler, _generator(seed, label))
        results = gen.to_circuits(gen.decode_tokens(tensors))
        produced: list = []
        rep = _tally(GenerationReport(srv_name(srvs[label]), label, n), results, q,
                     srvs[label], train_keys, produced)
        for srv in produced:
            if srv is not None:
                counts[row, index.get(srv, len(srvs))] += 1
        reports.append(rep)
    confusion = ConfusionMatrix([srv_name(srvs[p]) for p in prompts],
                                [srv_name(v) for v in srvs] + ["other"], counts, q)
    return SRVEvaluation(reports, confusion)


# ---------------------------------------------------------------------------
# masking / editing


def row_mask(gen: CircuitGenerator, rows: Sequence[int], token: int | None = None) -> InpaintSpec:
    """Forbid gates on whole qubit rows.

    Defaults to padding for a trailing block of rows (the circuit then simply
    has fewer qubits) and background otherwise.
    """
    vocab = gen.table.vocab
    known = np.zeros((gen.Q, gen.T), dtype=np.int64)
    mask = np.zeros((gen.Q, gen.T), dtype=bool)
    rows = sorted(rows)
    if token is None:
        trailing = rows == list(range(gen.Q - len(rows), gen.Q))
        token = vocab.padding_id if trailing else vocab.background_id
    for r in rows:
        mask[r] = True
        known[r] = token
    return InpaintSpec(known, mask)


def cell_mask(gen: CircuitGenerator, cells: Iterable[tuple[int, int]]) -> InpaintSpec:
    """Forbid gates on individual (qubit, timestep) cells by pinning them to background."""
    known = np.zeros((gen.Q, gen.T), dtype=np.int64)
    mask = np.zeros((gen.Q, gen.T), dtype=bool)
    for q, t in cells:
        mask[q, t] = True
    return InpaintSpec(known, mask)


def eval_mask(gen: CircuitGenerator, spec: InpaintSpec, label: int, sampler: SamplerConfig,
              n: int = 1024, seed: int = 0, train_keys: set[str] | None = None) -> GenerationReport:
    """SRV generation under an inpainting mask; ``violations`` counts samples whose
    decoded tokens disagree with the mask anywhere (always 0 by construction)."""
    q = gen.qubits
    srvs = enumerate_srvs(q)
    tensors = gen.sample_tensors(label, n, sampler, _generator(seed, label, 1), inpaint=spec)
    tokens = gen.decode_tokens(tensors)
    rep = GenerationReport(srv_name(srvs[label]), label, n)
    rep.violations = int(np.sum(np.any((tokens != spec.known_tokens[None]) & spec.mask[None], axis=(1, 2))))
    return _tally(rep, gen.to_circuits(tokens), q, srvs[label], train_keys)


def prefix_spec(gen: CircuitGenerator, prefix: Circuit) -> InpaintSpec:
    if len(prefix) >= gen.T:
        raise ValueError("prefix must be shorter than the canvas")
    tokens = tokenize(prefix.with_qubits(max(prefix.num_qubits, gen.qubits)),
                      gen.table.vocab, gen.Q, gen.T)
    mask = np.zeros_like(tokens, dtype=bool)
    mask[:, :len(prefix)] = True
    return InpaintSpec(tokens, mask)


@dataclass
class EditResult:
    success: bool
    rate: float
    n_samples: int
    n_preserved: int
    n_match: int
    solutions: list[Circuit] = field(default_factory=list, repr=False)


def eval_edit(gen: CircuitGenerator, prefix: Circuit, target_label: int, sampler: SamplerConfig,
              n: int = 1024, seed: int = 0) -> EditResult:
    """Complete ``prefix`` into circuits with the target SRV; success = at least one."""
    q = gen.qubits
    target = enumerate_srvs(q)[target_label]
    spec = prefix_spec(gen, prefix)
    tensors = gen.sample_tensors(target_label, n, sampler, _generator(seed, target_label, 2),
                                 inpaint=spec)
    k = len(prefix)
    preserved = matched = 0
    solutions = []
    for res in gen.to_circuits(gen.decode_tokens(tensors)):
        if isinstance(res, ErrorCircuit) or res.gates[:k] != prefix.gates:
            continue
        preserved += 1
        if srv_of(res, q) == target:
            matched += 1
            solutions.append(res)
    return EditResult(matched > 0, matched / n, n, preserved, matched, solutions)


def edit_success_matrix(gen: CircuitGenerator, prefixes: dict[int, list[Circuit]],
                        sampler: SamplerConfig, n: int = 1024, seed: int = 0) -> np.ndarray:
    """Rows: input SRV class of the prefix; columns: target SRV class.
    Entry = fraction of prefixes for which some sample reached the target."""
    num = len(enumerate_srvs(gen.qubits))
    out = np.full((num, num), np.nan)
    for src, circuits in prefixes.items():
        for dst in range(num):
            wins = [eval_edit(gen, c, dst, sampler, n, seed + i).success
                    for i, c in enumerate(circuits)]
            out[src, dst] = float(np.mean(wins)) if wins else np.nan
    return out


def random_prefixes(q: int, per_class: int, length: int, seed: int,
                    max_draws: int = 200_000) -> dict[int, list[Circuit]]:
    """Random H/CX prefixes of a fixed length grouped by their SRV class."""
    srvs = enumerate_srvs(q)
    index = {v: i for i, v in enumerate(srvs)}
    spec = DatasetSpec("srv", ["h", "cx"], q, length, length, 1, seed)
    rng = np.random.default_rng([seed, 7])
    out: dict[int, list[Circuit]] = {i: [] for i in range(len(srvs))}
    for _ in range(max_draws):
        c = sample_random_circuit(spec, rng)
        bucket = out[index[circuit_srv(c)]]
        if len(bucket) < per_class and c not in bucket:
            bucket.append(c)
        if all(len(b) >= per_class for b in out.values()):
            break
    return out


# ---------------------------------------------------------------------------
# compilation


@dataclass
class UnitaryResult:
    label: int
    n_exact: int
    best_distance: float
    best_phase_distance: float
    distinct_solutions: int
    n_error: int
    baseline_distance: float


@dataclass
class CompilationReport:
    results: list[UnitaryResult]
    n_samples: int
    tol: float

    @property
    def accuracy(self) -> float:
        if not self.results:
            return 0.0
        return sum(r.n_exact >= 1 for r in self.results) / len(self.results)

    @property
    def best_distances(self) -> np.ndarray:
        return np.array([r.best_distance for r in self.results])

    @property
    def baseline_distances(self) -> np.ndarray:
        return np.array([r.baseline_distance for r in self.results])

    def histograms(self, edges: np.ndarray | None = None) -> dict:
        if edges is None:
            edges = histogram_edges(self.tol)
        finite = lambda a: np.where(np.isfinite(a), a, edges[-1])  # noqa: E731
        return {
            "edges": edges.tolist(),
            "best": np.histogram(finite(self.best_distances), edges)[0].tolist(),
            "baseline": np.histogram(finite(self.baseline_distances), edges)[0].tolist(),
        }

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "n_unitaries": len(self.results),
            "n_samples": self.n_samples,
            "tol": self.tol,
            "dominates_baseline": stochastically_dominates(self.best_distances,
                                                           self.baseline_distances),
            "histograms": self.histograms(),
            "results": [asdict(r) for r in self.results],
        }

    def write_histogram_csv(self, path: str | Path):
        h = self.histograms()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lo", "hi", "best", "baseline"])
            for i, (b, r) in enumerate(zip(h["best"], h["baseline"])):
                w.writerow([h["edges"][i], h["edges"][i + 1], b, r])


def histogram_edges(tol: float = EXACT_TOL, max_dist: float = 16.0) -> np.ndarray:
    # first bin isolates exact solutions; 1/2||A-B||_F^2 <= 16 for 8x8 unitaries
    return np.concatenate([[0.0, tol], np.linspace(0.5, max_dist, 32)])


def stochastically_dominates(a: np.ndarray, b: np.ndarray) -> bool:
    """True when ECDF(a) >= ECDF(b) everywhere and > somewhere (a is smaller)."""
    a, b = np.sort(np.asarray(a, float)), np.sort(np.asarray(b, float))
    if a.size == 0 or b.size == 0:
        return False
    grid = np.union1d(a, b)
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return bool(np.all(fa >= fb - 1e-12) and np.any(fa > fb + 1e-12))


def eval_compile(gen: CircuitGenerator, targets: Sequence[tuple[np.ndarray, int]],
                 sampler: SamplerConfig, n: int = 1024, tol: float = EXACT_TOL, seed: int = 0,
                 baseline_spec: DatasetSpec | None = None,
                 target_keys: Sequence[str] | None = None,
                 train_keys: set[str] | None = None) -> CompilationReport:
    """Compile each (unitary, gate-subset label) target and score by Frobenius distance."""
    if target_keys is not None and train_keys is not None:
        leaked = [k for k in target_keys if k in train_keys]
        if leaked:
            raise ValueError(f"{len(leaked)} test circuits also appear in the training set")
    dim = 2 ** gen.qubits
    subsets = None
    rng = np.random.default_rng([seed, 11])
    results = []
    for i, (u, label) in enumerate(targets):
        u = np.asarray(u)
        if u.shape != (dim, dim):
            raise ValueError(f"target {i} has shape {u.shape}, expected {(dim, dim)}")
        tensors = gen.sample_tensors(label, n, sampler, _generator(seed, i, 3), unitary=u)
        best = best_phase = np.inf
        exact = errors = 0
        solutions = set()
        for res in gen.to_circuits(gen.decode_tokens(tensors)):
            if isinstance(res, ErrorCircuit) or res.num_qubits > gen.qubits:
                errors += 1
                continue
            ug = circuit_unitary(res.with_qubits(gen.qubits))
            dist = frobenius_distance(u, ug)
            best = min(best, dist)
            best_phase = min(best_phase, phase_insensitive_distance(u, ug))
            if dist < tol:
                exact += 1
                solutions.add(res.canonical_key)
        baseline = np.nan
        if baseline_spec is not None:
            subsets = subsets or enumerate_gate_subsets(baseline_spec.gate_pool)
            rc = sample_random_circuit(baseline_spec, rng, subsets[label].kinds)
            baseline = frobenius_distance(u, circuit_unitary(rc))
        results.append(UnitaryResult(label, exact, float(best), float(best_phase),
                                     len(solutions), errors, float(baseline)))
    return CompilationReport(results, n, tol)


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))
