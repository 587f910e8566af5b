"""Reconstruction training: full fine-tuning or prompt-only learning."""

from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import torch

from .errors import EmptyMask, InvalidConfig, NonFiniteLoss, TooFewWindows
from .model import ReconstructionTransformer
from .vitals import WindowBatch


class TrainMode(Enum):
    FINETUNE_ALL = "finetune_all"
    PROMPT_ONLY = "prompt_only"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr0: float = 1e-3
    lr_decay_gamma: float = 0.9
    batch_size: int = 64
    mode: TrainMode = TrainMode.FINETUNE_ALL
    mask_ratio: float = 0.0
    split_fraction: float = 0.8
    eval_every_epochs: int = 5
    max_steps: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.split_fraction < 1):
            raise InvalidConfig("split_fraction must be in (0, 1)")
        if self.epochs < 1:
            raise InvalidConfig("epochs must be >= 1")
        if self.lr0 <= 0:
            raise InvalidConfig("lr0 must be positive")
        if not (0 < self.lr_decay_gamma <= 1):
            raise InvalidConfig("lr_decay_gamma must be in (0, 1]")
        if not (0 <= self.mask_ratio < 1):
            raise InvalidConfig("mask_ratio must be in [0, 1)")


@dataclass
class TrainReport:
    train_losses: list[float] = field(default_factory=list)  # one per epoch
    val_losses: list[tuple[int, float]] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)  # lr in effect per epoch
    best_epoch: int = -1
    wall_time_s: float = 0.0


def split_train_val(batch: WindowBatch, fraction: float = 0.8,
                    ) -> tuple[WindowBatch, WindowBatch]:
    """Contiguous chronological split: first ``fraction`` of windows train.

    Windows overlap (stride 1), so a shuffled split would leak validation
    content into training.
    """
    num = batch.num_windows
    if num < 2:
        raise TooFewWindows("need at least 2 windows to split")
    n_train = int(math.floor(num * fraction))
    n_train = min(max(n_train, 1), num - 1)

    def sub(lo, hi):
        labels = batch.labels[lo:hi] if batch.labels is not None else None
        t0 = None
        if batch.t0 is not None and batch.step_s is not None:
            t0 = batch.t0 + lo * batch.step_s
        return WindowBatch(batch.windows[lo:hi], labels, t0, batch.step_s)

    return sub(0, n_train), sub(n_train, num)


def reconstruction_loss(x: torch.Tensor, x_hat: torch.Tensor,
                        mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean squared error over the scored cells: all cells when ``mask``
    is absent, the masked (mask == 1) cells in mask-predict mode."""
    if x.shape != x_hat.shape:
        from .errors import ShapeMismatch
        raise ShapeMismatch(f"shapes differ: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    err = (x - x_hat) ** 2
    if mask is None:
        return err.mean()
    mask = mask.to(err.dtype)
    total = mask.sum()
    if total.item() == 0:
        raise EmptyMask("mask selects no positions")
    return (err * mask).sum() / total


def train(windows: WindowBatch, config: TrainConfig,
          model: ReconstructionTransformer
          ) -> tuple[ReconstructionTransformer, TrainReport]:
    """Adam + per-epoch exponential LR decay; returns the best-validation
    parameters loaded back into ``model``.

    Windows labeled anomalous are dropped from the train split (the model
    learns normal behavior only). In prompt-only mode all non-prompt
    parameters stay bit-identical.
    """
    train_batch, val_batch = split_train_val(windows, config.split_fraction)
    train_w = train_batch.windows
    if train_batch.labels is not None:
        train_w = train_w[train_batch.labels == 0]
    if len(train_w) == 0:
        raise TooFewWindows("no anomaly-free training windows")

    x_train = torch.from_numpy(np.ascontiguousarray(train_w)).float()
    x_val = torch.from_numpy(np.ascontiguousarray(val_batch.windows)).float()

    if config.mode is TrainMode.PROMPT_ONLY:
        params = [model.prompt_tokens]
        for name, p in model.named_parameters():
            p.requires_grad_(name == "prompt_tokens")
    else:
        for p in model.parameters():
            p.requires_grad_(True)
        params = list(model.parameters())

    opt = torch.optim.Adam(params, lr=config.lr0,
                           betas=(0.9, 0.999), eps=1e-8)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, config.lr_decay_gamma)
    gen = torch.Generator().manual_seed(config.seed)

    report = TrainReport()
    best_val = math.inf
    best_state = copy.deepcopy(model.state_dict())
    last_finite = best_state
    t_start = time.monotonic()
    steps = 0
    stop = False

    for epoch in range(config.epochs):
        report.lrs.append(opt.param_groups[0]["lr"])
        order = torch.randperm(len(x_train), generator=gen)
        epoch_losses = []
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            xb = x_train[idx]
            mask = None
            inp = xb
            if config.mask_ratio > 0:
                mask = (torch.rand(xb.shape, generator=gen)
                        < config.mask_ratio).float()
                if mask.sum().item() == 0:
                    mask[0, 0, 0] = 1.0
                inp = xb * (1 - mask)
            loss = reconstruction_loss(xb, model(inp), mask)
            if not torch.isfinite(loss):
                raise NonFiniteLoss("training loss diverged",
                                    last_state=last_finite)
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, 1.0)
            opt.step()
            epoch_losses.append(loss.item())
            last_finite = copy.deepcopy(model.state_dict())
            steps += 1
            if config.max_steps is not None and steps >= config.max_steps:
                stop = True
                break
        report.train_losses.append(float(np.mean(epoch_losses)))
        sched.step()

        last_epoch = stop or epoch == config.epochs - 1
        if (epoch + 1) % config.eval_every_epochs == 0 or last_epoch:
            with torch.no_grad():
                val_loss = reconstruction_loss(x_val, model(x_val)).item()
            report.val_losses.append((epoch, val_loss))
            if val_loss < best_val:
                best_val = val_loss
                report.best_epoch = epoch
                best_state = copy.deepcopy(model.state_dict())
        if stop:
            break

    model.load_state_dict(best_state)
    report.wall_time_s = time.monotonic() - t_start
    return model, report


def train_config_from_file(path) -> TrainConfig:
    from .signalio import parse_kv_file

    raw = parse_kv_file(path)
    kwargs = {}
    casts = {
        "epochs": int, "lr0": float, "lr_decay_gamma": float,
        "batch_size": int, "mask_ratio": float, "split_fraction": float,
        "eval_every_epochs": int, "max_steps": int, "seed": int,
    }
    for key, value in raw.items():
        if key == "mode":
            kwargs["mode"] = TrainMode(value)
        elif key in casts:
            kwargs[key] = casts[key](value)
        else:
            raise InvalidConfig(f"unknown training key {key!r}")
    return TrainConfig(**kwargs)
