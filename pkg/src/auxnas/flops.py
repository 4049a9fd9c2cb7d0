"""Inference cost accounting: symbolic formulas and measured op counts.

Symbolic counts follow the per-method inference cost taxonomy, with ``N``
the FLOPs of one single-task network, ``M`` the fusion FLOPs per task
pair (or extra attention FLOPs) and ``K`` the number of auxiliary tasks.

Measured counts come from recording a forward pass on a tape and summing
the per-node op counts (multiply-adds for linear maps, element ops for
norm/activation/arithmetic).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import archnet, trainer
from .autodiff import Tape, backward
from .exceptions import ContractViolation

METHODS = ("ours", "soft_mtl", "hard_attention", "adashare_bound")


@dataclass(frozen=True)
class FlopsModel:
    N: float
    M: float
    K: int

    def __post_init__(self):
        if self.N < 0 or self.M < 0 or self.K < 0:
            raise ContractViolation(f"flops: negative input N={self.N} M={self.M} K={self.K}")

    def ours(self) -> float:
        return self.N

    def soft_mtl(self) -> float:
        return (self.K + 1) * self.N + (self.K + 1) * self.K * self.M / 2

    def hard_attention(self) -> float:
        return self.N + self.M

    def adashare_bound(self) -> tuple[float, float]:
        """Upper-bounded interval ``[0, N]``."""
        return (0.0, self.N)

    def evaluate(self, method: str):
        if method not in METHODS:
            raise ContractViolation(f"unknown cost method {method!r}")
        return getattr(self, method)()

    def table(self) -> dict:
        return {m: self.evaluate(m) for m in METHODS}


def flops(N: float, M: float, K: int, method: str = "ours"):
    return FlopsModel(N, M, K).evaluate(method)


@dataclass(frozen=True)
class MeasuredCost:
    total: int
    projection: int
    norm: int
    activation: int
    n_nodes: int

    def to_dict(self) -> dict:
        return {"total": self.total, "projection": self.projection, "norm": self.norm,
                "activation": self.activation, "n_nodes": self.n_nodes}


def _summarize(tape: Tape) -> MeasuredCost:
    return MeasuredCost(tape.forward_flops(), tape.forward_flops("projection"),
                        tape.forward_flops("norm"), tape.forward_flops("activation"),
                        len(tape.nodes))


def measure_inference(net: archnet.AuxNetwork, batch: int = 1) -> MeasuredCost:
    """Op count of one eval-mode primary forward pass over ``batch`` inputs."""
    x = np.zeros((batch, net.input_dim))
    tape = Tape()
    archnet.forward(net, x, tape, training=False, primary_only=True)
    return _summarize(tape)


def measure_single_task(net: archnet.AuxNetwork, batch: int = 1) -> MeasuredCost:
    """Op count of the plain single-task network with ``net``'s primary shape."""
    tape = Tape()
    archnet.single_task_forward(net, np.zeros((batch, net.input_dim)), tape)
    return _summarize(tape)


def fusion_overhead(net: archnet.AuxNetwork, batch: int = 1) -> int:
    """Expected pruned-minus-single-task op count.

    Per fused primary layer: four norm element ops (two sums, two products)
    per element, plus one truncation per element for every ReLU beyond the
    single ReLU of a plain layer. The stem is identical in both networks.
    """
    relus = (net.block_activation == "relu") + (net.activation == "relu")
    total = 0
    for i in range(1, net.n_layers + 1):
        width = batch * net.primary.width(i)
        if f"{archnet.PRIMARY}.L{i}.gamma" in net.params:
            total += 4 * width
        total += (relus - 1) * width
    return total


def measure_training_step(net: archnet.AuxNetwork, x, targets, lam: float = 0.0) -> dict:
    """Forward+backward op counts of one training objective evaluation."""
    tape = Tape()
    root, _ = trainer.objective(net, x, targets, lam, tape, training=True)
    backward(tape, root)
    fwd = tape.forward_flops()
    bwd = tape.backward_flops()
    return {"forward": fwd, "backward": bwd, "total": fwd + bwd}
