"""Command line entry point: ``uditqc <command> ...``.

Exit codes: 0 ok, 1 configuration error, 2 I/O error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .circuit import Circuit, CircuitValidationError, circuit_unitary, draw
from .codec import build_embedding_table
from .conditioning import Condition, unitary_to_tensor
from .config import ConfigError, RunConfig, load_config, preset_names
from .dataset import (CircuitRecord, DatasetFormatError, build_manifest, generate_dataset,
                      read_dataset, write_dataset)
from .diffusion import SamplingError, TrainingDiverged, cosine_schedule, train
from .evaluation import (eval_compile, eval_edit, eval_mask, eval_srv, random_prefixes, row_mask,
                         edit_success_matrix, write_json)
from .model import UDiT
from .pipeline import CircuitGenerator, load_checkpoint, save_checkpoint

log = logging.getLogger("uditqc")

EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 1, 2, 3


def default_workers() -> int:
    return int(os.environ.get("UDITQC_WORKERS", "1"))


# ---------------------------------------------------------------------------
# helpers


def _config(args) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "run_dir", None) is not None:
        overrides["paths.run_dir"] = str(args.run_dir)
    for attr, key in [("balanced_size", "dataset.balanced_size"), ("epochs", "train.epochs"),
                      ("batch_size", "train.batch_size"), ("steps", "sampler.steps"),
                      ("cfg_scale", "sampler.cfg_scale"), ("sampler", "sampler.kind"),
                      ("eta", "sampler.eta")]:
        if getattr(args, attr, None) is not None:
            overrides[key] = getattr(args, attr)
    return load_config(args.config, overrides)


def _dataset_paths(cfg: RunConfig) -> tuple[Path, Path, Path]:
    d = cfg.dataset_dir
    return d / "dataset.jsonl", d / "test.jsonl", d / "manifest.json"


def _encode(gen: CircuitGenerator, records: list[CircuitRecord]) -> tuple[torch.Tensor, Condition]:
    x0 = gen.encode([r.circuit for r in records])
    labels = torch.tensor([r.label for r in records], dtype=torch.long)
    unitaries = None
    if records and records[0].unitary is not None:
        unitaries = unitary_to_tensor(np.stack([r.unitary for r in records]))
    return x0, Condition(labels, unitaries)


def _checkpoint(cfg: RunConfig, args) -> Path:
    path = Path(args.checkpoint) if getattr(args, "checkpoint", None) else cfg.checkpoint_dir / "final"
    if not (path / "manifest.json").exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    return path


def _load_generator(cfg: RunConfig, args) -> CircuitGenerator:
    gen, _ = load_checkpoint(_checkpoint(cfg, args), batch_size=args.batch)
    return gen


def _train_keys(cfg: RunConfig) -> set[str] | None:
    path = _dataset_paths(cfg)[0]
    if not path.exists():
        return None
    return {r.canonical_key for r in read_dataset(path)}


def _parse_srv_label(cfg: RunConfig, text: str) -> int:
    name = "[" + ",".join(p.strip() for p in text.strip("[] ").split(",")) + "]"
    if name not in cfg.labels:
        raise ConfigError(f"--srv: {text!r} is not one of {cfg.labels}")
    return cfg.labels.index(name)


def _parse_gate_label(cfg: RunConfig, text: str) -> int:
    wanted = {g.strip().lower() for g in text.split(",") if g.strip()}
    for i, name in enumerate(cfg.labels):
        if set(name.split(",")) == wanted:
            return i
    raise ConfigError(f"--gates: {text!r} is not a subset of {cfg.dataset.gate_pool}")


def _read_unitary(path: str) -> np.ndarray:
    obj = json.loads(Path(path).read_text())
    if isinstance(obj, dict) and "gates" in obj:
        return circuit_unitary(Circuit.from_json(obj))
    if isinstance(obj, dict) and "unitary" in obj:
        obj = obj["unitary"]
    arr = np.asarray(obj, dtype=np.float64)
    return arr[..., 0] + 1j * arr[..., 1]


# ---------------------------------------------------------------------------
# commands


def cmd_dataset(args) -> int:
    cfg = _config(args)
    expected = "srv" if args.kind == "gen-srv" else "compile"
    if cfg.task != expected:
        raise ConfigError(f"task: config is for {cfg.task!r}, command needs {expected!r}")
    records = generate_dataset(cfg.dataset, workers=args.workers)
    test: list[CircuitRecord] = []
    if cfg.holdout:
        test, records = records[:cfg.holdout], records[cfg.holdout:]
    data_path, test_path, manifest_path = _dataset_paths(cfg)
    data_path.parent.mkdir(parents=True, exist_ok=True)
    digest = write_dataset(data_path, records)
    manifest = build_manifest(cfg.dataset, records, digest)
    if test:
        manifest["test"] = {"path": test_path.name, "total": len(test),
                            "sha256": write_dataset(test_path, test)}
    manifest_path.write_text(json.dumps(manifest, indent=2))
    print(json.dumps({"dataset": str(data_path), "num_classes": manifest["num_classes"],
                      "class_counts": manifest["class_counts"], "total": manifest["total"]}))
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    data_path = Path(args.dataset) if args.dataset else _dataset_paths(cfg)[0]
    records = read_dataset(data_path)
    torch.manual_seed(cfg.seed)
    model = UDiT(cfg.model)
    table = build_embedding_table(cfg.vocab, cfg.embedding_seed)
    schedule = cosine_schedule(cfg.train.num_timesteps)
    gen = CircuitGenerator(model, table, schedule, cfg.model.Q, cfg.model.T,
                           cfg.dataset.qubits, model.null_index, cfg.task, cfg.labels)
    x0, cond = _encode(gen, records)

    def save(path, step):
        save_checkpoint(path, model, table, task=cfg.task, qubits=cfg.dataset.qubits,
                        labels=cfg.labels, step=step,
                        extra={"train": cfg.train.to_json(), "dataset": str(data_path)})

    history = train(model, x0, cond, cfg.train, schedule, cfg.checkpoint_dir, save)
    print(json.dumps({"checkpoint": str(cfg.checkpoint_dir / "final"),
                      "first_epoch_loss": history[0]["loss"], "final_epoch_loss": history[-1]["loss"]}))
    return 0


def cmd_sample(args) -> int:
    cfg = _config(args)
    gen = _load_generator(cfg, args)
    if cfg.task == "srv":
        if not args.srv:
            raise ConfigError("--srv: required for the srv task")
        label = _parse_srv_label(cfg, args.srv)
        unitary = None
    else:
        if not args.gates or not args.unitary:
            raise ConfigError("--gates and --unitary: both required for the compile task")
        label = _parse_gate_label(cfg, args.gates)
        unitary = _read_unitary(args.unitary)
    torch_gen = torch.Generator().manual_seed(cfg.seed)
    tensors = gen.sample_tensors(label, args.n, cfg.sampler, torch_gen, unitary=unitary)
    lines = []
    for res in gen.to_circuits(gen.decode_tokens(tensors)):
        lines.append(json.dumps(res.to_json(), separators=(",", ":")))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    gen = _load_generator(cfg, args)
    out_dir = Path(args.out) if args.out else cfg.report_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    keys = _train_keys(cfg)
    if args.kind == "srv":
        res = eval_srv(gen, cfg.sampler, args.n, cfg.seed, keys)
        write_json(out_dir / "eval_srv.json", res.to_json())
        res.confusion.write_csv(out_dir / "confusion.csv")
        summary = {"macro_accuracy": res.macro_accuracy, "micro_accuracy": res.micro_accuracy,
                   "error_rate": res.error_rate}
    elif args.kind == "mask":
        label = _parse_srv_label(cfg, args.srv)
        rows = [int(r) for r in args.mask_rows.split(",")] if args.mask_rows else []
        spec = row_mask(gen, rows)
        rep = eval_mask(gen, spec, label, cfg.sampler, args.n, cfg.seed, keys)
        write_json(out_dir / "eval_mask.json", rep.to_json())
        summary = rep.to_json()
    elif args.kind == "edit":
        if args.prefix:
            prefix = Circuit.from_json(json.loads(Path(args.prefix).read_text()))
            label = _parse_srv_label(cfg, args.srv)
            res = eval_edit(gen, prefix, label, cfg.sampler, args.n, cfg.seed)
            summary = {"success": res.success, "rate": res.rate, "n_preserved": res.n_preserved,
                       "solutions": [c.to_json() for c in res.solutions[:16]]}
        else:
            prefixes = random_prefixes(gen.qubits, args.prefixes, args.prefix_length, cfg.seed)
            matrix = edit_success_matrix(gen, prefixes, cfg.sampler, args.n, cfg.seed)
            summary = {"labels": cfg.labels, "success_matrix": matrix.tolist()}
        write_json(out_dir / "eval_edit.json", summary)
    else:
        if cfg.task != "compile":
            raise ConfigError("task: eval compile needs a compile config")
        test_path = _dataset_paths(cfg)[1]
        tests = read_dataset(Path(args.test) if args.test else test_path)[:args.num_unitaries]
        targets = [(r.unitary, r.label) for r in tests]
        rep = eval_compile(gen, targets, cfg.sampler, args.n, seed=cfg.seed,
                           baseline_spec=cfg.dataset,
                           target_keys=[r.canonical_key for r in tests], train_keys=keys)
        write_json(out_dir / "eval_compile.json", rep.to_json())
        rep.write_histogram_csv(out_dir / "compile_histogram.csv")
        summary = {"accuracy": rep.accuracy, "n_unitaries": len(rep.results),
                   "dominates_baseline": rep.to_json()["dominates_baseline"]}
    print(json.dumps(summary, default=float))
    return 0


def cmd_inspect(args) -> int:
    text = Path(args.file).read_text()
    try:
        objs = [json.loads(text)]
    except json.JSONDecodeError:
        objs = [json.loads(line) for line in text.splitlines() if line.strip()]
    for i, obj in enumerate(objs):
        if "error" in obj:
            print(f"# {i}: error circuit ({obj['error']} at column {obj.get('column')})")
            continue
        circuit = Circuit.from_json(obj.get("circuit", obj))
        print(f"# {i}: {circuit.num_qubits} qubits, {len(circuit)} gates")
        print(draw(circuit))
    return 0


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    # usage mistakes are configuration errors; exit code 2 is reserved for I/O
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="uditqc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", required=True,
                        help=f"config JSON path or preset name ({', '.join(preset_names())})")
        sp.add_argument("--run-dir", type=Path, help="override paths.run_dir")
        if seed:
            sp.add_argument("--seed", type=int, help="override the config seed")

    def sampling(sp):
        sp.add_argument("--checkpoint", help="checkpoint directory (default: <run>/checkpoints/final)")
        sp.add_argument("--steps", type=int, help="denoising steps")
        sp.add_argument("--cfg-scale", type=float, help="classifier-free guidance scale")
        sp.add_argument("--sampler", choices=["strided", "ancestral"], help="sampler kind")
        sp.add_argument("--eta", type=float, help="stochasticity of the strided sampler")
        sp.add_argument("--batch", type=int, default=256, help="sampling batch size")

    ds = sub.add_parser("dataset", help="generate a dataset")
    ds.add_argument("kind", choices=["gen-srv", "gen-compile"])
    common(ds)
    ds.add_argument("--balanced-size", type=int, help="override dataset.balanced_size")
    ds.add_argument("--workers", type=int, default=default_workers(),
                    help="worker processes (env UDITQC_WORKERS)")
    ds.set_defaults(fn=cmd_dataset)

    tr = sub.add_parser("train", help="train a model on a generated dataset")
    common(tr)
    tr.add_argument("--dataset", help="dataset JSONL (default: <run>/dataset/dataset.jsonl)")
    tr.add_argument("--epochs", type=int, help="override train.epochs")
    tr.add_argument("--batch-size", type=int, help="override train.batch_size")
    tr.set_defaults(fn=cmd_train)

    sm = sub.add_parser("sample", help="sample circuits from a checkpoint")
    common(sm)
    sampling(sm)
    sm.add_argument("--srv", help="SRV prompt, e.g. 1,2,2")
    sm.add_argument("--gates", help="gate-subset prompt, e.g. h,cx")
    sm.add_argument("--unitary", help="target unitary JSON ([[ [re,im],..],..] or a circuit object)")
    sm.add_argument("--n", type=int, default=8, help="number of samples")
    sm.add_argument("--out", help="write JSONL here instead of stdout")
    sm.set_defaults(fn=cmd_sample)

    ev = sub.add_parser("eval", help="run an evaluation protocol")
    ev.add_argument("kind", choices=["srv", "mask", "edit", "compile"])
    common(ev)
    sampling(ev)
    ev.add_argument("--n", type=int, default=1024, help="samples per prompt / unitary")
    ev.add_argument("--out", help="report directory (default: <run>/reports)")
    ev.add_argument("--srv", default="2,2,2", help="SRV prompt for mask/edit")
    ev.add_argument("--mask-rows", help="comma-separated qubit rows to mask (mask)")
    ev.add_argument("--prefix", help="prefix circuit JSON (edit); omit for the success matrix")
    ev.add_argument("--prefixes", type=int, default=20, help="random prefixes per input SRV (edit)")
    ev.add_argument("--prefix-length", type=int, default=5, help="gates per random prefix (edit)")
    ev.add_argument("--test", help="held-out records JSONL (compile)")
    ev.add_argument("--num-unitaries", type=int, default=500, help="test unitaries (compile)")
    ev.set_defaults(fn=cmd_eval)

    ins = sub.add_parser("inspect", help="draw circuits from a JSON/JSONL file")
    ins.add_argument("file")
    ins.set_defaults(fn=cmd_inspect)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, CircuitValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DatasetFormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingDiverged, SamplingError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
