"""AdamW with a weights-only decay mask, step-wise LR schedules, gradient accumulation."""
from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import torch
from torch import nn

from ..errors import ArgumentError, NumericError


@dataclass
class OptimizerConfig:
    lr: float = 5e-5
    betas: tuple = (0.9, 0.96)
    weight_decay: float = 0.01
    eps: float = 1e-8
    grad_accum: int = 16
    batch_size: int = 4

    def __post_init__(self):
        if not all(0 < b < 1 for b in self.betas):
            raise ArgumentError("betas must lie in (0, 1)")


@dataclass
class LrSchedule:
    milestones: tuple = (5000, 150000, 300000)
    gamma: float = 0.5

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ArgumentError("milestones must be strictly increasing")


def lr_at(step: int, sched: LrSchedule, lr0: float) -> float:
    """MultiStep decay: lr0 * gamma ** (number of milestones <= step)."""
    if step < 0:
        raise ArgumentError("step must be >= 0")
    return lr0 * sched.gamma ** bisect.bisect_right(sched.milestones, step)


def exponential_lr(step: int, lr0: float, gamma: float) -> float:
    return lr0 * gamma ** step


def decay_exempt(model: nn.Module, extra: Iterable[str] = ()) -> set[str]:
    """Names of parameters that skip weight decay: biases, norm gains, embeddings, 1-D tensors."""
    exempt = set(extra)
    for mod_name, mod in model.named_modules():
        for p_name, p in mod.named_parameters(recurse=False):
            full = f"{mod_name}.{p_name}" if mod_name else p_name
            if p.ndim < 2 or isinstance(mod, (nn.Embedding, nn.LayerNorm)):
                exempt.add(full)
    return exempt


@torch.no_grad()
def adamw_step(param: torch.Tensor, grad: torch.Tensor, exp_avg: torch.Tensor, exp_avg_sq: torch.Tensor,
               step: int, lr: float, betas, eps: float, weight_decay: float, decay: bool, name: str = "?"):
    """In-place decoupled-weight-decay Adam update; ``step`` counts from 1."""
    if param.shape != grad.shape:
        raise ArgumentError(f"{name}: gradient shape {tuple(grad.shape)} != {tuple(param.shape)}")
    if not torch.isfinite(grad).all():
        raise NumericError(f"non-finite gradient for parameter {name}")
    b1, b2 = betas
    if decay and weight_decay:
        param.mul_(1 - lr * weight_decay)
    exp_avg.mul_(b1).add_(grad, alpha=1 - b1)
    exp_avg_sq.mul_(b2).addcmul_(grad, grad, value=1 - b2)
    m_hat = exp_avg / (1 - b1 ** step)
    v_hat = exp_avg_sq / (1 - b2 ** step)
    param.sub_(lr * m_hat / (v_hat.sqrt() + eps))


class AdamW:
    """Minimal named-parameter AdamW whose state serialises into checkpoints."""

    def __init__(self, named_params: Sequence[tuple[str, nn.Parameter]], lr: float, betas=(0.9, 0.96),
                 weight_decay: float = 0.01, eps: float = 1e-8, exempt: Iterable[str] = ()):
        self.params = [(n, p) for n, p in named_params if p.requires_grad]
        self.lr, self.betas, self.weight_decay, self.eps = lr, tuple(betas), weight_decay, eps
        self.exempt = set(exempt)
        self.t = 0
        self.state = {n: (torch.zeros_like(p), torch.zeros_like(p)) for n, p in self.params}

    @classmethod
    def for_module(cls, model: nn.Module, lr: float, betas=(0.9, 0.96), weight_decay: float = 0.01,
                   extra_exempt: Iterable[str] = (), **kw) -> "AdamW":
        return cls(list(model.named_parameters()), lr, betas, weight_decay,
                   exempt=decay_exempt(model, extra_exempt), **kw)

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        for name, p in self.params:
            if p.grad is None:
                continue
            m, v = self.state[name]
            adamw_step(p.data, p.grad, m, v, self.t, self.lr, self.betas, self.eps, self.weight_decay,
                       decay=name not in self.exempt, name=name)

    def tensors(self, prefix: str) -> dict[str, torch.Tensor]:
        out = {}
        for name, (m, v) in self.state.items():
            out[f"{prefix}/{name}/exp_avg"] = m
            out[f"{prefix}/{name}/exp_avg_sq"] = v
        return out

    def load_tensors(self, prefix: str, table: dict[str, torch.Tensor], t: int):
        self.t = t
        for name, (m, v) in self.state.items():
            m.copy_(table[f"{prefix}/{name}/exp_avg"])
            v.copy_(table[f"{prefix}/{name}/exp_avg_sq"])


def clip_grad_norm(params, max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    if not grads or max_norm <= 0:
        return 0.0
    return float(torch.nn.utils.clip_grad_norm_([p for p in params if p.grad is not None], max_norm))


def accumulated_step(loss_fn: Callable, microbatches: Sequence, optimizer: AdamW, clip: float = 0.0):
    """One optimizer step over ``len(microbatches)`` micro-batches with mean-reduced gradients.

    ``loss_fn(mb)`` returns a scalar (or a tuple whose first item is the scalar
    to optimise). Returns the list of per-micro-batch outputs.
    """
    if not microbatches:
        raise ArgumentError("no micro-batches")
    optimizer.zero_grad()
    outs = []
    for mb in microbatches:
        out = loss_fn(mb)
        loss = out[0] if isinstance(out, tuple) else out
        if not torch.isfinite(loss):
            raise NumericError(f"non-finite loss {loss.item()}")
        (loss / len(microbatches)).backward()
        outs.append(out)
    if clip:
        clip_grad_norm([p for _, p in optimizer.params], clip)
    optimizer.step()
    return outs
