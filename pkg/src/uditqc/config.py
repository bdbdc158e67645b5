"""Run configuration: one JSON file describing dataset, model, training and sampling."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .circuit import enumerate_srvs
from .codec import GateVocabulary
from .conditioning import UEncConfig
from .dataset import DatasetSpec, enumerate_gate_subsets
from .diffusion import SamplerConfig, TrainConfig
from .model import UDiTConfig


class ConfigError(ValueError):
    pass


MODEL_KEYS = {"hidden", "cond_dim", "depths", "heads", "mlp_ratio", "residual_connections",
              "asymmetric", "label_dropout", "unitary", "Q", "T"}


@dataclass
class RunConfig:
    task: str
    seed: int
    dataset: DatasetSpec
    model: UDiTConfig
    train: TrainConfig
    sampler: SamplerConfig
    embedding_seed: int = 0
    holdout: int = 0
    run_dir: Path = field(default_factory=lambda: Path("runs/default"))

    @property
    def vocab(self) -> GateVocabulary:
        return GateVocabulary.of(self.dataset.gate_pool)

    @property
    def labels(self) -> list[str]:
        if self.task == "srv":
            return ["[" + ",".join(map(str, v)) + "]" for v in enumerate_srvs(self.dataset.qubits)]
        return [",".join(s.names) for s in enumerate_gate_subsets(self.dataset.gate_pool)]

    @property
    def dataset_dir(self) -> Path:
        return self.run_dir / "dataset"

    @property
    def checkpoint_dir(self) -> Path:
        return self.run_dir / "checkpoints"

    @property
    def report_dir(self) -> Path:
        return self.run_dir / "reports"


def _check_keys(section: str, obj: dict, allowed: set[str]):
    if not isinstance(obj, dict):
        raise ConfigError(f"{section}: expected an object")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"{section}.{unknown[0]}: unknown field")


def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _build(section: str, cls, obj: dict):
    try:
        return cls(**obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def parse_config(raw: dict) -> RunConfig:
    _check_keys("<root>", raw, {"task", "seed", "dataset", "model", "train", "sampler",
                                "embedding_seed", "holdout", "paths", "description"})
    for key in ("task", "seed", "dataset"):
        if key not in raw:
            raise ConfigError(f"{key}: required field missing")
    task = raw["task"]
    if task not in ("srv", "compile"):
        raise ConfigError(f"task: must be 'srv' or 'compile', got {task!r}")
    seed = raw["seed"]
    if not isinstance(seed, int):
        raise ConfigError("seed: must be an integer")

    ds_raw = dict(raw["dataset"])
    _check_keys("dataset", ds_raw, _fields(DatasetSpec) - {"seed", "task"})
    dataset = _build("dataset", DatasetSpec, {**ds_raw, "task": task, "seed": seed})

    tr_raw = dict(raw.get("train", {}))
    _check_keys("train", tr_raw, _fields(TrainConfig) - {"seed"})
    train = _build("train", TrainConfig, {**tr_raw, "seed": seed})

    sp_raw = dict(raw.get("sampler", {}))
    _check_keys("sampler", sp_raw, _fields(SamplerConfig))
    sampler = _build("sampler", SamplerConfig, sp_raw)

    m_raw = dict(raw.get("model", {}))
    _check_keys("model", m_raw, MODEL_KEYS)
    Q = m_raw.pop("Q", dataset.qubits)
    T = m_raw.pop("T", dataset.max_gates)
    if Q < dataset.qubits:
        raise ConfigError(f"model.Q: canvas has {Q} rows but dataset.qubits = {dataset.qubits}")
    if T < dataset.max_gates:
        raise ConfigError(f"model.T: canvas has {T} columns but dataset.max_gates = {dataset.max_gates}")
    vocab = GateVocabulary.of(dataset.gate_pool)
    n_classes = (len(enumerate_srvs(dataset.qubits)) if task == "srv"
                 else len(enumerate_gate_subsets(dataset.gate_pool)))
    if task == "compile":
        u_raw = m_raw.get("unitary") or {}
        _check_keys("model.unitary", u_raw, _fields(UEncConfig))
        u_raw.setdefault("qubits", dataset.qubits)
        if u_raw["qubits"] != dataset.qubits:
            raise ConfigError("model.unitary.qubits: must equal dataset.qubits")
        m_raw["unitary"] = _build("model.unitary", UEncConfig,
                                  {**u_raw, "channels": tuple(u_raw.get("channels", (32, 64)))})
    elif m_raw.get("unitary"):
        raise ConfigError("model.unitary: only valid for the compile task")
    model = _build("model", UDiTConfig, {**m_raw, "Q": Q, "T": T, "d": vocab.dim,
                                         "num_classes": n_classes,
                                         "num_timesteps": train.num_timesteps})

    paths = raw.get("paths", {})
    _check_keys("paths", paths, {"run_dir"})
    run_dir = Path(paths.get("run_dir", f"runs/{task}{dataset.qubits}"))
    holdout = raw.get("holdout", 0)
    if not isinstance(holdout, int) or holdout < 0:
        raise ConfigError("holdout: must be a non-negative integer")
    return RunConfig(task, seed, dataset, model, train, sampler,
                     int(raw.get("embedding_seed", 0)), holdout, run_dir)


def preset_names() -> list[str]:
    files = resources.files("uditqc").joinpath("presets").iterdir()
    return sorted(p.name[:-5] for p in files if p.name.endswith(".json"))


def load_raw(name_or_path: str) -> dict:
    path = Path(name_or_path)
    if path.exists():
        text = path.read_text()
    elif name_or_path in preset_names():
        text = resources.files("uditqc").joinpath("presets", f"{name_or_path}.json").read_text()
    else:
        raise FileNotFoundError(f"no config file or preset named {name_or_path!r}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{name_or_path}: invalid JSON ({exc})") from exc


def load_config(name_or_path: str, overrides: dict | None = None) -> RunConfig:
    raw = load_raw(name_or_path)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = raw
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return parse_config(raw)
