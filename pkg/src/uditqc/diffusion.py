"""Forward process, epsilon-loss training, guided samplers and inpainting."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .conditioning import Condition

log = logging.getLogger(__name__)

Denoiser = Callable[[torch.Tensor, torch.Tensor, Condition], torch.Tensor]


class SamplingError(RuntimeError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, msg: str, last_checkpoint: str | None):
        super().__init__(msg)
        self.last_checkpoint = last_checkpoint


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    def alpha_bar_prev(self, t: int) -> float:
        return 1.0 if t < 0 else float(self.alpha_bar[t])


def cosine_schedule(T: int, s: float = 0.008, max_beta: float = 0.999) -> NoiseSchedule:
    """Squared-cosine schedule; index i is diffusion step i+1 of the closed form."""
    if T < 2:
        raise ValueError("T must be >= 2")
    steps = np.arange(T + 1, dtype=np.float64)
    f = np.cos((steps / T + s) / (1 + s) * math.pi / 2) ** 2
    ab = f / f[0]
    beta = np.minimum(1 - ab[1:] / ab[:-1], max_beta)
    alpha = 1 - beta
    return NoiseSchedule(beta, alpha, np.cumprod(alpha))


def _gather(values: np.ndarray, t: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    v = torch.as_tensor(values, dtype=like.dtype)[t]
    return v.reshape(-1, *([1] * (like.dim() - 1)))


def q_sample(x0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor,
             schedule: NoiseSchedule) -> torch.Tensor:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} != x0 shape {tuple(x0.shape)}")
    ab = _gather(schedule.alpha_bar, t, x0)
    return ab.sqrt() * x0 + (1 - ab).sqrt() * eps


def training_loss(model: Denoiser, x0: torch.Tensor, cond: Condition,
                  schedule: NoiseSchedule, generator: torch.Generator | None = None) -> torch.Tensor:
    """Mean squared error between the injected noise and the model's estimate."""
    b = x0.shape[0]
    t = torch.randint(0, schedule.T, (b,), generator=generator)
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    x_t = q_sample(x0, t, eps, schedule)
    embedder = getattr(model, "y_embedder", None)
    if embedder is not None and getattr(model, "training", False):
        pred = model(x_t, t, cond, label_drop=embedder.drop_mask(cond.labels, generator))
    else:
        pred = model(x_t, t, cond)
    return ((eps - pred) ** 2).mean()


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    num_timesteps: int = 1000
    epochs: int = 300
    batch_size: int = 256
    lr: float = 3e-4
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    warmup_frac: float = 0.1
    final_div: float = 25.0
    seed: int = 0
    checkpoint_every: int = 10
    divergence_threshold: float = 1e3

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("need lr > 0, epochs >= 1, batch_size >= 1")

    def to_json(self) -> dict:
        return asdict(self)


def make_optimizer(model: torch.nn.Module, cfg: TrainConfig, total_steps: int):
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, betas=cfg.betas,
                            weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.OneCycleLR(
        opt, max_lr=cfg.lr, total_steps=max(total_steps, 2), pct_start=cfg.warmup_frac,
        anneal_strategy="cos", cycle_momentum=False,
        div_factor=cfg.final_div, final_div_factor=1.0)
    return opt, sched


def train(model: torch.nn.Module, x0: torch.Tensor, cond: Condition, cfg: TrainConfig,
          schedule: NoiseSchedule | None = None, out_dir: str | Path | None = None,
          save_fn: Callable[[Path, int], None] | None = None) -> list[dict]:
    """Train ``model`` on encoded circuits ``x0`` (N, Q, T, d).

    Writes ``train_log.jsonl`` (one line per optimizer step) and calls
    ``save_fn(path, step)`` every ``checkpoint_every`` epochs and at the end.
    Returns per-epoch summaries.
    """
    if x0.shape[0] == 0:
        raise ValueError("empty dataset")
    schedule = schedule or cosine_schedule(cfg.num_timesteps)
    torch.manual_seed(cfg.seed)  # dropout inside the unitary encoder
    gen = torch.Generator().manual_seed(cfg.seed)
    n = x0.shape[0]
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    opt, sched = make_optimizer(model, cfg, steps_per_epoch * cfg.epochs)
    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "train_log.jsonl", "w")
    history = []
    last_ckpt = None
    step = 0
    model.train()
    try:
        for epoch in range(cfg.epochs):
            perm = torch.randperm(n, generator=gen)
            total = 0.0
            for i in range(steps_per_epoch):
                idx = perm[i * cfg.batch_size:(i + 1) * cfg.batch_size]
                loss = training_loss(model, x0[idx], cond.select(idx), schedule, gen)
                value = loss.item()
                if not math.isfinite(value) or value > cfg.divergence_threshold:
                    raise TrainingDiverged(
                        f"loss {value} at step {step} (epoch {epoch})", last_ckpt)
                lr = sched.get_last_lr()[0]
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                sched.step()
                total += value * len(idx)
                if log_fh is not None:
                    log_fh.write(json.dumps({"step": step, "epoch": epoch, "lr": lr, "loss": value}) + "\n")
                step += 1
            mean = total / n
            history.append({"epoch": epoch, "loss": mean, "step": step})
            log.info("epoch %d loss %.5f", epoch, mean)
            last_epoch = epoch == cfg.epochs - 1
            if save_fn is not None and out is not None and (
                    (epoch + 1) % cfg.checkpoint_every == 0 or last_epoch):
                path = out / ("final" if last_epoch else f"epoch{epoch + 1:04d}")
                save_fn(path, step)
                last_ckpt = str(path)
    finally:
        if log_fh is not None:
            log_fh.close()
        model.eval()
    return history


# ---------------------------------------------------------------------------
# sampling


@dataclass
class SamplerConfig:
    steps: int = 100
    cfg_scale: float = 7.5
    kind: str = "strided"  # "strided" (deterministic at eta=0) or "ancestral"
    eta: float = 0.0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.cfg_scale < 1:
            raise ValueError("cfg_scale must be >= 1")
        if self.kind not in ("strided", "ancestral"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class InpaintSpec:
    known_tokens: np.ndarray  # (Q, T)
    mask: np.ndarray  # (Q, T) bool, True = enforced

    def __post_init__(self):
        self.known_tokens = np.asarray(self.known_tokens, dtype=np.int64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.known_tokens.shape != self.mask.shape:
            raise ValueError("known_tokens and mask must share a shape")


def cfg_epsilon(model: Denoiser, x_t: torch.Tensor, t: torch.Tensor, cond: Condition,
                null_cond: Condition | None, s: float) -> torch.Tensor:
    """eps(null) + s * (eps(cond) - eps(null)); s = 1 skips the null pass."""
    if s < 1:
        raise ValueError("guidance scale must be >= 1")
    eps_c = model(x_t, t, cond)
    if s == 1:
        return eps_c
    eps_u = model(x_t, t, null_cond)
    return eps_u + s * (eps_c - eps_u)


def sampling_timesteps(T: int, steps: int) -> list[int]:
    """Evenly spaced timesteps from T-1 down to 0 (inclusive)."""
    if steps > T:
        raise ValueError(f"steps={steps} exceeds T={T}")
    ts = np.unique(np.round(np.linspace(0, T - 1, steps)).astype(int))
    return [int(t) for t in ts[::-1]]


@torch.no_grad()
def sample(model: Denoiser, cond: Condition, shape: tuple[int, ...], sampler: SamplerConfig,
           schedule: NoiseSchedule, generator: torch.Generator | None = None,
           null_cond: Condition | None = None, inpaint: tuple[torch.Tensor, torch.Tensor] | None = None,
           x_init: torch.Tensor | None = None, dtype=torch.float32) -> torch.Tensor:
    """Reverse diffusion from Gaussian noise.

    ``inpaint`` = (x0_known, mask) with mask broadcastable to ``shape``:
    after every step the enforced cells are re-noised from x0_known to the
    new noise level, and set to x0_known exactly at the end.
    """
    if sampler.cfg_scale != 1 and null_cond is None:
        null_cond = cond.as_null(model.null_index)
    ts = sampling_timesteps(schedule.T, sampler.steps)
    ab = schedule.alpha_bar
    x = x_init.to(dtype) if x_init is not None else torch.randn(shape, generator=generator, dtype=dtype)
    if inpaint is not None:
        known, mask = inpaint[0].to(dtype), inpaint[1]
        x = torch.where(mask, _renoise(known, ts[0], schedule, generator), x)
    b = shape[0]
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else -1
        tt = torch.full((b,), t, dtype=torch.long)
        eps = cfg_epsilon(model, x, tt, cond, null_cond, sampler.cfg_scale).to(dtype)
        a_t, a_prev = float(ab[t]), schedule.alpha_bar_prev(t_prev)
        if sampler.kind == "ancestral":
            beta = float(schedule.beta[t]) if t_prev == t - 1 else 1 - a_t / a_prev
            mean = (x - beta / math.sqrt(1 - a_t) * eps) / math.sqrt(1 - beta)
            var = beta * (1 - a_prev) / (1 - a_t)
            x = mean
            if t_prev >= 0:
                x = x + math.sqrt(var) * torch.randn(shape, generator=generator, dtype=dtype)
        else:
            x0_pred = (x - math.sqrt(1 - a_t) * eps) / math.sqrt(a_t)
            sigma = sampler.eta * math.sqrt((1 - a_prev) / (1 - a_t) * (1 - a_t / a_prev))
            x = math.sqrt(a_prev) * x0_pred + math.sqrt(max(1 - a_prev - sigma ** 2, 0.0)) * eps
            if sigma > 0 and t_prev >= 0:
                x = x + sigma * torch.randn(shape, generator=generator, dtype=dtype)
        if inpaint is not None:
            fixed = known if t_prev < 0 else _renoise(known, t_prev, schedule, generator)
            x = torch.where(mask, fixed, x)
        if not torch.isfinite(x).all():
            raise SamplingError(f"non-finite state at t={t}")
    return x


def _renoise(known: torch.Tensor, t: int, schedule: NoiseSchedule,
             generator: torch.Generator | None) -> torch.Tensor:
    eps = torch.randn(known.shape, generator=generator, dtype=known.dtype)
    tt = torch.full((known.shape[0],), t, dtype=torch.long)
    return q_sample(known, tt, eps, schedule)


def inpaint_sample(model: Denoiser, cond: Condition, spec: InpaintSpec, n: int,
                   sampler: SamplerConfig, schedule: NoiseSchedule, table,
                   generator: torch.Generator | None = None, dtype=torch.float32,
                   null_cond: Condition | None = None) -> torch.Tensor:
    """Sample ``n`` tensors whose enforced cells follow ``spec.known_tokens``."""
    from .codec import embed

    known = torch.as_tensor(embed(spec.known_tokens, table), dtype=dtype)
    Q, T, d = known.shape
    known = known.expand(n, Q, T, d).contiguous()
    mask = torch.as_tensor(spec.mask)[None, :, :, None].expand(n, Q, T, d)
    return sample(model, cond, (n, Q, T, d), sampler, schedule, generator,
                  null_cond=null_cond, inpaint=(known, mask), dtype=dtype)
