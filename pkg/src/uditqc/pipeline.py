"""Model + codec + schedule bundle used for sampling, evaluation and checkpoints."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .circuit import Circuit
from .codec import EmbeddingTable, ErrorCircuit, decode, detokenize, embed, tokenize
from .conditioning import Condition, unitary_to_tensor
from .diffusion import (Denoiser, InpaintSpec, NoiseSchedule, SamplerConfig, cosine_schedule,
                        sample)
from .model import UDiT, UDiTConfig

MODEL_FILE = "model.pt"
MANIFEST_FILE = "manifest.json"
EMBEDDING_FILE = "embedding.json"


@dataclass
class CircuitGenerator:
    """Everything needed to turn a condition into decoded circuits.

    ``model`` is any denoiser ``(x_t, t, Condition) -> eps``; a ``UDiT`` in
    practice, closed-form oracles in tests.
    """

    model: Denoiser
    table: EmbeddingTable
    schedule: NoiseSchedule
    Q: int
    T: int
    qubits: int
    null_index: int
    task: str = "srv"
    labels: list[str] = field(default_factory=list)
    dtype: torch.dtype = torch.float32
    batch_size: int = 256

    @property
    def d(self) -> int:
        return self.table.vocab.dim

    def encode(self, circuits: Sequence[Circuit]) -> torch.Tensor:
        arr = np.stack([embed(tokenize(c, self.table.vocab, self.Q, self.T), self.table)
                        for c in circuits])
        return torch.as_tensor(arr, dtype=self.dtype)

    def sample_tensors(self, label: int, n: int, sampler: SamplerConfig,
                       generator: torch.Generator, unitary: np.ndarray | None = None,
                       inpaint: InpaintSpec | None = None) -> torch.Tensor:
        """``n`` samples for one class label (and optionally one unitary), batched."""
        out = []
        known = mask = None
        if inpaint is not None:
            known = torch.as_tensor(embed(inpaint.known_tokens, self.table), dtype=self.dtype)
            mask = torch.as_tensor(inpaint.mask)[:, :, None].expand_as(known)
        for start in range(0, n, self.batch_size):
            b = min(self.batch_size, n - start)
            u = None
            if unitary is not None:
                u = unitary_to_tensor(unitary).to(self.dtype).expand(b, -1, -1, -1).contiguous()
            cond = Condition(torch.full((b,), label, dtype=torch.long), u)
            null = Condition(torch.full((b,), self.null_index, dtype=torch.long), u,
                             torch.ones(b, dtype=torch.bool))
            shape = (b, self.Q, self.T, self.d)
            ip = None
            if inpaint is not None:
                ip = (known.expand(shape).contiguous(), mask.expand(shape))
            out.append(sample(self.model, cond, shape, sampler, self.schedule, generator,
                              null_cond=null, inpaint=ip, dtype=self.dtype))
        return torch.cat(out) if out else torch.empty((0, self.Q, self.T, self.d), dtype=self.dtype)

    def decode_tokens(self, tensors: torch.Tensor) -> np.ndarray:
        return decode(tensors.detach().cpu().double().numpy(), self.table)

    def to_circuits(self, tokens: np.ndarray) -> list[Circuit | ErrorCircuit]:
        return [detokenize(tok, self.table.vocab) for tok in tokens]


def save_checkpoint(path: str | Path, model: UDiT, table: EmbeddingTable, *,
                    task: str, qubits: int, labels: list[str], step: int = 0,
                    extra: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), path / MODEL_FILE)
    table.save(path / EMBEDDING_FILE)
    manifest = {
        "config": model.cfg.to_json(),
        "task": task,
        "qubits": qubits,
        "labels": labels,
        "vocab": table.vocab.names,
        "embedding_seed": table.seed,
        "schedule": {"kind": "cosine", "T": model.cfg.num_timesteps},
        "step": step,
    }
    if extra:
        manifest.update(extra)
    (path / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2))
    return path


def load_checkpoint(path: str | Path, batch_size: int = 256) -> tuple[CircuitGenerator, dict]:
    path = Path(path)
    manifest = json.loads((path / MANIFEST_FILE).read_text())
    cfg = UDiTConfig.from_json(manifest["config"])
    model = UDiT(cfg)
    model.load_state_dict(torch.load(path / MODEL_FILE, map_location="cpu", weights_only=True))
    model.eval()
    table = EmbeddingTable.load(path / EMBEDDING_FILE)
    gen = CircuitGenerator(
        model=model, table=table, schedule=cosine_schedule(manifest["schedule"]["T"]),
        Q=cfg.Q, T=cfg.T, qubits=manifest["qubits"], null_index=model.null_index,
        task=manifest["task"], labels=manifest["labels"], batch_size=batch_size)
    return gen, manifest
