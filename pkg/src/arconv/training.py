"""Training loop: l1 objective, Adam, stepped learning-rate decay.

Runs split into two phases.  During exploration every batch may pick
its own per-layer point counts from the batch-mean extents; once the
exploration budget is spent, one batch's combination from the final
exploratory epoch is adopted at random and stays fixed for the rest of
the run.  Extents keep learning throughout.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .network import ARNet
from .sampling import KernelSpec
from .tensor import Tensor


@dataclass
class TrainConfig:
    """Optimisation switches; defaults are sized for a desk run."""

    epochs: int = 70
    explore_epochs: int = 10
    batch_size: int = 8
    lr0: float = 6e-4
    decay_factor: float = 0.8
    decay_period: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0 < self.explore_epochs < self.epochs):
            raise ConfigurationError(
                f"need 0 < explore_epochs < epochs, got "
                f"{self.explore_epochs}/{self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr0 <= 0:
            raise ConfigurationError(f"lr0 must be positive, got {self.lr0}")
        if not (0 < self.decay_factor <= 1):
            raise ConfigurationError(
                f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.decay_period < 1:
            raise ConfigurationError(
                f"decay_period must be >= 1, got {self.decay_period}")
        for b in (self.beta1, self.beta2):
            if not (0 <= b < 1):
                raise ConfigurationError(f"betas must be in [0, 1), got {b}")
        if self.eps <= 0:
            raise ConfigurationError(f"eps must be positive, got {self.eps}")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Stepped decay: lr0 * factor^(epoch // period), epoch 0-based."""
    return cfg.lr0 * cfg.decay_factor ** (epoch // cfg.decay_period)


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error (scalar Tensor)."""
    return (pred - target).abs().mean()


@dataclass
class AdamState:
    """First/second moment per parameter name, plus the step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_net(cls, net: ARNet) -> "AdamState":
        state = cls()
        for name, t in net.named_parameters():
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        return state

    def to_extra(self) -> dict[str, np.ndarray]:
        out = {"adam.step": np.array([self.step], dtype=np.float32)}
        for name, arr in self.m.items():
            out[f"adam.m.{name}"] = arr
        for name, arr in self.v.items():
            out[f"adam.v.{name}"] = arr
        return out

    @classmethod
    def from_extra(cls, extra: dict[str, np.ndarray], net: ARNet) -> "AdamState":
        state = cls.for_net(net)
        state.step = int(extra["adam.step"][0])
        for name in state.m:
            state.m[name] = extra[f"adam.m.{name}"].astype(np.float32).copy()
            state.v[name] = extra[f"adam.v.{name}"].astype(np.float32).copy()
        return state


def adam_step(net: ARNet, state: AdamState, lr: float, cfg: TrainConfig) -> None:
    """One update over every parameter; missing gradients count as zero."""
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name, p in net.named_parameters():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


@dataclass
class EpochResult:
    epoch: int  # 1-based in logs
    lr: float
    loss: float
    batch_specs: list[list[KernelSpec]]  # one spec list per batch
    seconds: float

    def to_json(self, frozen: bool) -> str:
        obj = {"epoch": self.epoch, "lr": self.lr, "loss": self.loss,
               "seconds": round(self.seconds, 3)}
        spec_lists = [[[s.k_h, s.k_w] for s in specs] for specs in self.batch_specs]
        if frozen:
            obj["specs"] = spec_lists[0] if spec_lists else []
        else:
            obj["batch_specs"] = spec_lists
        return json.dumps(obj)


def run_epoch(net: ARNet, pan: np.ndarray, lrms_up: np.ndarray, gt: np.ndarray,
              state: AdamState, cfg: TrainConfig, epoch: int,
              order: np.ndarray) -> EpochResult:
    """One pass over the training arrays in the given sample order.

    ``epoch`` is 0-based.  Returns the mean batch loss and the per-batch
    spec combinations observed (constant once frozen; asserted so).
    """
    t0 = time.monotonic()
    lr = lr_at(epoch, cfg)
    losses = []
    batch_specs = []
    frozen = net.frozen_specs()
    for lo in range(0, len(order), cfg.batch_size):
        idx = order[lo:lo + cfg.batch_size]
        net.zero_grad()
        out = net.forward(Tensor(pan[idx]), Tensor(lrms_up[idx]))
        loss = l1_loss(out, Tensor(gt[idx]))
        loss.backward()
        adam_step(net, state, lr, cfg)
        losses.append(float(loss.data))
        specs = net.last_specs()
        if frozen is not None and specs != frozen:
            raise ConfigurationError(
                f"spec drift after freeze: {specs} != {frozen}")
        batch_specs.append(specs)
    return EpochResult(epoch=epoch + 1, lr=lr, loss=float(np.mean(losses)),
                       batch_specs=batch_specs, seconds=time.monotonic() - t0)


def freeze_specs(last_explore: EpochResult,
                 rng: np.random.Generator) -> list[KernelSpec]:
    """Adopt one batch's combination from the final exploratory epoch."""
    if not last_explore.batch_specs:
        raise ConfigurationError("no batches recorded in the exploratory epoch")
    pick = int(rng.integers(len(last_explore.batch_specs)))
    return last_explore.batch_specs[pick]


def train(net: ARNet, pan: np.ndarray, lrms_up: np.ndarray, gt: np.ndarray,
          cfg: TrainConfig, seed: int, state: AdamState | None = None,
          start_epoch: int = 0, log_fh=None,
          on_epoch=None) -> tuple[AdamState, list[EpochResult]]:
    """Run epochs ``start_epoch``..``epochs-1`` over in-memory arrays.

    Shuffling and the freeze draw come from child streams of ``seed``,
    so identical inputs give bit-identical parameter trajectories.
    """
    if not (len(pan) == len(lrms_up) == len(gt)) or len(pan) == 0:
        raise ConfigurationError(
            f"sample counts differ or empty: {len(pan)}/{len(lrms_up)}/{len(gt)}")
    state = state or AdamState.for_net(net)
    shuffle_rng = np.random.default_rng([seed, 1])
    freeze_rng = np.random.default_rng([seed, 2])
    # Keep the shuffle stream aligned with the epoch index on resume.
    for _ in range(start_epoch):
        shuffle_rng.permutation(len(pan))
    history: list[EpochResult] = []
    for epoch in range(start_epoch, cfg.epochs):
        order = shuffle_rng.permutation(len(pan))
        result = run_epoch(net, pan, lrms_up, gt, state, cfg, epoch, order)
        history.append(result)
        if log_fh is not None:
            # The final exploratory epoch still logs per-batch specs; the
            # freeze draw below is made from exactly that record.
            log_fh.write(result.to_json(net.frozen) + "\n")
            log_fh.flush()
        if epoch + 1 == cfg.explore_epochs and not net.frozen:
            net.freeze(freeze_specs(result, freeze_rng))
        if on_epoch is not None:
            on_epoch(result)
    return state, history
