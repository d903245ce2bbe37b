"""Toy supervised training on a synthetic patch-position task.

Each image is uniform noise in [0, 1) with one bright 4x4 patch.  The label
says which half of the image holds the patch (0 = left, 1 = right), so the
image mean carries no information and the network has to use spatial
context.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .model import from_state, model_backward, model_forward, model_init, variant_config
from .tensor import Rng

CLIP_NORM = 5.0


@dataclass(frozen=True)
class SyntheticTask:
    seed: int = 0
    size: int = 32
    num_classes: int = 2
    patch: int = 4
    brightness: float = 1.1

    def __post_init__(self):
        if self.num_classes != 2:
            raise ValueError("the position task is binary")
        if self.size < 2 * self.patch:
            raise ValueError(f"image size {self.size} cannot hold a {self.patch}px patch per half")


def generate_batch(task: SyntheticTask, n: int, rng: Rng):
    """``n`` images (n, 3, S, S) float32 and their labels, classes balanced to within one."""
    S, P = task.size, task.patch
    labels = np.arange(n) % 2
    if n % 2:
        labels[-1] = rng.integers(0, 2, 1)[0]
    labels = labels[rng.permutation(n)]

    x = rng.uniform(n * 3 * S * S).reshape(n, 3, S, S)
    half = S // 2
    rows = rng.integers(0, S - P + 1, n)
    cols = rng.integers(0, half - P + 1, n) + labels * half
    for i in range(n):
        x[i, :, rows[i]:rows[i] + P, cols[i]:cols[i] + P] = task.brightness
    return x.astype(np.float32), labels


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
    """Plain SGD on name -> array mappings; returns new arrays."""
    return {k: v - lr * grads[k] for k, v in params.items()}


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float = CLIP_NORM):
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if total <= max_norm:
        return grads, total
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}, total


def accuracy(logits: np.ndarray, labels) -> float:
    return float(np.mean(logits[:, :, 0, 0].argmax(axis=1) == np.asarray(labels)))


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    accuracy: float = 0.0
    steps: int = 0
    seed: int = 0

    def lines(self) -> list[str]:
        return [f"{i + 1}\t{loss:.6f}" for i, loss in enumerate(self.losses)]


def train_toy(task: SyntheticTask | None = None, steps: int = 300, lr: float = 0.02,
              seed: int = 0, batch: int = 16, branch_kernels=None, eval_size: int = 512,
              variant: str = "toy", callback=None) -> TrainReport:
    """Train the toy variant with clipped SGD and report the loss trace.

    ``accuracy`` is measured after the last step on ``eval_size`` fresh
    samples from the same task.  Parameters, training batches and the
    evaluation batch draw from three separate streams derived from ``seed``.
    """
    task = task or SyntheticTask(seed=seed)
    kwargs = {} if branch_kernels is None else {"branch_kernels": branch_kernels}
    cfg = variant_config(variant, num_classes=task.num_classes, **kwargs)
    params = model_init(cfg, Rng(seed))
    data_rng = Rng(task.seed * 1_000_003 + seed + 1)
    eval_rng = Rng(task.seed * 1_000_003 + seed + 2)

    report = TrainReport(steps=steps, seed=seed)
    state = params.state_dict()
    for step in range(steps):
        x, y = generate_batch(task, batch, data_rng)
        logits, _, tape = model_forward(x, params)
        loss, dlogits = ops.softmax_xent(logits, y)
        grads = model_backward(tape, dlogits).state_dict()
        grads, _ = clip_by_global_norm(grads)
        state = sgd_step(state, grads, lr)
        params = from_state(cfg, state)
        report.losses.append(loss)
        if callback is not None:
            callback(step + 1, loss)

    xe, ye = generate_batch(task, eval_size, eval_rng)
    logits, _, _ = model_forward(xe, params, record=False)
    report.accuracy = accuracy(logits, ye)
    return report

