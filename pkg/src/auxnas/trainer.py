"""Training loops: joint gradient training and the alternating architecture search.

Model weights ``w`` and architecture weights ``alpha`` are disjoint
parameter groups. In search mode each step draws two non-overlapping
batches: the first updates ``w`` on ``L_P + L_A``, the second updates
``alpha`` on ``L_P + L_A + lam * sum|alpha_P|`` followed by a clamp to
``[0, 1]``. ``lam`` ramps from 0 to its end value over the alpha-step
budget.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import archnet
from . import autodiff as ad
from .archnet import PRIMARY, AuxNetwork
from .autodiff import ParamStore, Tape, Tensor
from .exceptions import ConfigurationError, ContractViolation, NonFiniteError, TrainingDiverged
from .taskgen import iterate_indices

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("step", "L_P", "L_A", "R", "lambda", "alphaP_max", "alphaP_mean",
               "alphaA_mean", "batch_op_count", "batch_wall_ms")


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    optimizer: str = "sgd"
    lr_w: float = 1e-2
    lr_alpha: float = 1e-2
    momentum: float = 0.9
    adam_betas: tuple[float, float] = (0.9, 0.999)
    lambda_end: float = 100.0
    ramp: str = "linear"
    lr_schedule: str = "constant"
    alpha_optimizer: str = "sgd"
    proximal: bool = False
    freeze_alpha_p: bool = False
    aux_weight: float = 1.0
    seed: int = 0
    log_wall_time: bool = False

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam") or self.alpha_optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}/{self.alpha_optimizer!r}")
        if self.ramp not in ("linear", "constant"):
            raise ConfigurationError(f"unknown lambda ramp {self.ramp!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigurationError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.epochs < 0 or self.batch_size < 2:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 2")
        if self.lr_w < 0 or self.lr_alpha < 0 or self.lambda_end < 0:
            raise ConfigurationError("learning rates and lambda_end must be non-negative")


@dataclass(frozen=True)
class LambdaSchedule:
    end: float = 100.0
    total_steps: int = 1
    start: float = 0.0
    shape: str = "linear"

    def __call__(self, step: int) -> float:
        if self.shape == "constant":
            return self.end
        if self.total_steps <= 1:
            return self.end
        t = min(max(step, 0), self.total_steps - 1) / (self.total_steps - 1)
        return self.start + (self.end - self.start) * t


class Optimizer:
    """SGD with optional momentum, or Adam; state keyed by parameter name."""

    def __init__(self, kind: str = "sgd", lr: float = 1e-2, momentum: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.kind = kind
        self.lr = lr
        self.momentum = momentum
        self.betas = betas
        self.eps = eps
        self.state: dict[str, dict] = {}
        self.t = 0

    def step(self, store: ParamStore, grads: dict[str, np.ndarray], names: Sequence[str]) -> None:
        self.t += 1
        for name in names:
            g = grads[name]
            st = self.state.setdefault(name, {})
            if self.kind == "adam":
                b1, b2 = self.betas
                m = st["m"] = b1 * st.get("m", 0.0) + (1 - b1) * g
                v = st["v"] = b2 * st.get("v", 0.0) + (1 - b2) * g * g
                m_hat = m / (1 - b1 ** self.t)
                v_hat = v / (1 - b2 ** self.t)
                store[name] = store[name] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            elif self.momentum:
                buf = st["buf"] = self.momentum * st.get("buf", 0.0) + g
                store[name] = store[name] - self.lr * buf
            else:
                store[name] = store[name] - self.lr * g


def lr_factor(shape: str, step: int, total: int) -> float:
    """Multiplier on the base weight learning rate; cosine decays to 0 at ``total``."""
    if shape == "constant" or total <= 1:
        return 1.0
    return 0.5 * (1.0 + math.cos(math.pi * min(step, total) / total))


# ---------------------------------------------------------------------------
# objectives


def nas_objective(L_P: Tensor, L_A: Tensor | None, alpha_P: Sequence[Tensor], lam: float) -> Tensor:
    """``L_P + L_A + lam * ||alpha_P||_1``. Auxiliary gates are not penalized.

    Gates live in ``[0, 1]``, where the norm is ``sum(alpha_P)``; its
    gradient 1 is used at ``alpha = 0`` too, so a gate at 0 under positive
    pressure stays there unless the data gradient outweighs ``lam``.
    """
    if lam < 0:
        raise ContractViolation("nas_objective: lambda must be non-negative")
    total = L_P if L_A is None else ad.add(L_P, L_A)
    if lam and alpha_P:
        total = ad.add(total, ad.mul_const(ad.l1_norm(alpha_P, zero_subgradient=1.0), lam))
    return total


def _batch_targets(targets: Sequence[np.ndarray], idx: np.ndarray) -> list[np.ndarray]:
    return [t[idx] for t in targets]


def objective(net: AuxNetwork, x, targets, lam: float, tape: Tape | None,
              training: bool = True, aux_weight: float = 1.0,
              values: dict | None = None) -> tuple[Tensor, dict]:
    """Full training objective and its parts ``L_P``, ``L_A``, ``R`` as floats."""
    outs = archnet.forward(net, x, tape, training, values=values)
    losses = archnet.task_losses(net, outs, targets)
    L_P = losses[PRIMARY]
    aux = [losses[b] for b in losses if b != PRIMARY]
    L_A = ad.add_n(aux) if aux else None
    if L_A is not None and aux_weight != 1.0:
        L_A = ad.mul_const(L_A, aux_weight)
    get = archnet.bind(net, tape, values)
    alpha_P = [get(n) for n in net.params.names("alpha_P")]
    root = nas_objective(L_P, L_A, alpha_P, lam)
    parts = {
        "L_P": float(L_P.data),
        "L_A": 0.0 if L_A is None else float(L_A.data),
        "R": lam * float(sum(abs(float(a.data)) for a in alpha_P)),
    }
    return root, parts


def alpha_stats(values: Sequence[float]) -> dict:
    if not len(values):
        return {"min": 0.0, "max": 0.0, "mean": 0.0, "median": 0.0}
    v = np.asarray(values, dtype=np.float64)
    return {"min": float(v.min()), "max": float(v.max()), "mean": float(v.mean()),
            "median": float(np.median(v))}


def _alpha_values(net: AuxNetwork, group: str) -> list[float]:
    return [float(net.params[n]) for n in net.params.names(group)]


# ---------------------------------------------------------------------------
# reports


@dataclass
class TrainReport:
    mode: str
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    final_alphas: dict[str, float] = field(default_factory=dict)
    final_lambda: float = 0.0
    op_count_per_batch: int = 0
    wall_time_s: float = 0.0
    diverged: bool = False

    @property
    def final_R(self) -> float:
        return self.steps[-1]["R"] if self.steps else 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.steps:
            writer.writerow([_fmt(row.get(c)) for c in CSV_COLUMNS])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.csv_text())


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def final_alpha_p(report: TrainReport) -> list[float]:
    return [v for n, v in report.final_alphas.items() if f"->{PRIMARY}:" in n]


def final_alpha_a(report: TrainReport) -> list[float]:
    return [v for n, v in report.final_alphas.items() if f"->{PRIMARY}:" not in n]


# ---------------------------------------------------------------------------
# steps


def _w_step(net, x, targets, opt, cfg, names) -> tuple[dict, int]:
    tape = Tape()
    root, parts = objective(net, x, targets, 0.0, tape, True, cfg.aux_weight)
    grads = ad.backward(tape, root, net.params)
    opt.step(net.params, grads, names)
    return parts, tape.forward_flops() + tape.backward_flops()


def _clamp_alphas(net: AuxNetwork) -> None:
    for group in ("alpha_P", "alpha_A"):
        for n in net.params.names(group):
            net.params[n] = np.clip(net.params[n], 0.0, 1.0)


def alternate_step(net: AuxNetwork, x, targets, batch_w: np.ndarray, batch_alpha: np.ndarray,
                   opt_w: Optimizer, opt_alpha: Optimizer, lam: float,
                   cfg: TrainConfig | None = None) -> dict:
    """One w-update on ``batch_w`` then one alpha-update on ``batch_alpha``."""
    cfg = cfg or TrainConfig()
    if np.intersect1d(batch_w, batch_alpha).size:
        raise ContractViolation("alternate_step: weight and architecture batches overlap")
    if net.mode != "aux_nas":
        raise ContractViolation(f"alternate_step needs an aux_nas network, got {net.mode!r}")
    x = np.asarray(x)
    w_names = net.w_names()
    parts_w, ops_w = _w_step(net, x[batch_w], _batch_targets(targets, batch_w), opt_w, cfg, w_names)

    tape = Tape()
    root, _ = objective(net, x[batch_alpha], _batch_targets(targets, batch_alpha),
                        0.0 if cfg.proximal else lam, tape, True, cfg.aux_weight)
    grads = ad.backward(tape, root, net.params)
    a_names = net.params.names("alpha_A")
    if not cfg.freeze_alpha_p:
        a_names = net.params.names("alpha_P") + a_names
    opt_alpha.step(net.params, grads, a_names)
    if cfg.proximal and not cfg.freeze_alpha_p:
        shrink = opt_alpha.lr * lam
        for n in net.params.names("alpha_P"):
            v = net.params[n]
            net.params[n] = np.sign(v) * np.maximum(np.abs(v) - shrink, 0.0)
    _clamp_alphas(net)
    ops = ops_w + tape.forward_flops() + tape.backward_flops()
    R = lam * float(sum(abs(v) for v in _alpha_values(net, "alpha_P")))
    return {"L_P": parts_w["L_P"], "L_A": parts_w["L_A"], "R": R, "ops": ops}


# ---------------------------------------------------------------------------
# loops


def _row(step, parts, lam, net, ops, wall_ms):
    ap = _alpha_values(net, "alpha_P")
    aa = _alpha_values(net, "alpha_A")
    return {
        "step": step, "L_P": parts["L_P"], "L_A": parts["L_A"], "R": parts["R"],
        "lambda": float(lam),
        "alphaP_max": float(max(ap)) if ap else 0.0,
        "alphaP_mean": float(np.mean(ap)) if ap else 0.0,
        "alphaA_mean": float(np.mean(aa)) if aa else 0.0,
        "batch_op_count": int(ops),
        "batch_wall_ms": wall_ms,
    }


def _epoch_summary(epoch, net, rows) -> dict:
    return {
        "epoch": epoch,
        "L_P": float(np.mean([r["L_P"] for r in rows])) if rows else 0.0,
        "L_A": float(np.mean([r["L_A"] for r in rows])) if rows else 0.0,
        "alpha_P": alpha_stats(_alpha_values(net, "alpha_P")),
        "alpha_A": alpha_stats(_alpha_values(net, "alpha_A")),
    }


def _finish(report: TrainReport, net: AuxNetwork, lam: float, t0: float) -> TrainReport:
    report.final_alphas = {n: float(net.params[n])
                           for n in net.params.names("alpha_P") + net.params.names("alpha_A")}
    report.final_lambda = float(lam)
    if report.steps:
        report.op_count_per_batch = report.steps[0]["batch_op_count"]
    report.wall_time_s = time.perf_counter() - t0
    return report


def train(net: AuxNetwork, x, targets: Sequence[np.ndarray], cfg: TrainConfig) -> TrainReport:
    """Train ``net`` in place; dispatches on the network mode."""
    if net.mode == "aux_nas":
        return train_aux_nas(net, x, targets, cfg)
    if net.mode == "pruned":
        raise ContractViolation("a pruned network is inference-only")
    return _train_joint(net, x, targets, cfg)


def train_aux_g(net: AuxNetwork, x, targets, cfg: TrainConfig) -> TrainReport:
    if net.mode != "aux_g":
        raise ContractViolation(f"train_aux_g needs an aux_g network, got {net.mode!r}")
    return _train_joint(net, x, targets, cfg)


def _train_joint(net: AuxNetwork, x, targets, cfg: TrainConfig) -> TrainReport:
    x = np.asarray(x, dtype=np.float64)
    report = TrainReport(net.mode)
    opt = Optimizer(cfg.optimizer, cfg.lr_w, cfg.momentum, cfg.adam_betas)
    names = net.w_names()
    t0 = time.perf_counter()
    step = 0
    total = cfg.epochs * (len(x) // cfg.batch_size)
    prev = net.params.copy()
    for epoch in range(cfg.epochs):
        rows = []
        for idx in iterate_indices(len(x), cfg.batch_size, _epoch_seed(cfg.seed, epoch)):
            opt.lr = cfg.lr_w * lr_factor(cfg.lr_schedule, step, total)
            tick = time.perf_counter()
            snapshot = net.params.copy()
            try:
                parts, ops = _w_step(net, x[idx], _batch_targets(targets, idx), opt, cfg, names)
            except NonFiniteError as exc:
                net.params = prev
                raise TrainingDiverged(f"non-finite value at step {step}: {exc}", prev, step) from exc
            prev = snapshot
            wall = round((time.perf_counter() - tick) * 1e3, 3) if cfg.log_wall_time else None
            rows.append(_row(step, parts, 0.0, net, ops, wall))
            step += 1
        report.steps.extend(rows)
        report.epochs.append(_epoch_summary(epoch, net, rows))
    return _finish(report, net, 0.0, t0)


def _epoch_seed(seed: int, epoch: int) -> list[int]:
    return [seed, 0xBA7C, epoch]


def alpha_step_budget(n_samples: int, cfg: TrainConfig) -> int:
    return cfg.epochs * (n_samples // (2 * cfg.batch_size))


def train_aux_nas(net: AuxNetwork, x, targets, cfg: TrainConfig,
                  schedule: LambdaSchedule | None = None) -> TrainReport:
    """Single-phase search; the final network feeds :func:`archnet.prune` directly."""
    if net.mode != "aux_nas":
        raise ContractViolation(f"train_aux_nas needs an aux_nas network, got {net.mode!r}")
    x = np.asarray(x, dtype=np.float64)
    total = alpha_step_budget(len(x), cfg)
    schedule = schedule or LambdaSchedule(cfg.lambda_end, total, 0.0, cfg.ramp)
    if cfg.freeze_alpha_p:
        for n in net.params.names("alpha_P"):
            net.params[n] = 0.0
    opt_w = Optimizer(cfg.optimizer, cfg.lr_w, cfg.momentum, cfg.adam_betas)
    opt_a = Optimizer(cfg.alpha_optimizer, cfg.lr_alpha, 0.0, cfg.adam_betas)
    report = TrainReport(net.mode)
    t0 = time.perf_counter()
    step = 0
    lam = schedule(0)
    prev = net.params.copy()
    for epoch in range(cfg.epochs):
        rows = []
        pairs = iterate_indices(len(x), cfg.batch_size, _epoch_seed(cfg.seed, epoch),
                                disjoint_pairs=True)
        for bw, ba in pairs:
            lam = schedule(step)
            opt_w.lr = cfg.lr_w * lr_factor(cfg.lr_schedule, step, total)
            tick = time.perf_counter()
            snapshot = net.params.copy()
            try:
                out = alternate_step(net, x, targets, bw, ba, opt_w, opt_a, lam, cfg)
            except NonFiniteError as exc:
                net.params = prev
                raise TrainingDiverged(f"non-finite value at step {step}: {exc}", prev, step) from exc
            prev = snapshot
            wall = round((time.perf_counter() - tick) * 1e3, 3) if cfg.log_wall_time else None
            rows.append(_row(step, out, lam, net, out["ops"], wall))
            step += 1
        report.steps.extend(rows)
        report.epochs.append(_epoch_summary(epoch, net, rows))
        logger.debug("epoch %d alphaP max %.4g", epoch, report.epochs[-1]["alpha_P"]["max"])
    return _finish(report, net, lam, t0)


# ---------------------------------------------------------------------------
# convergence monitoring


@dataclass
class Convergence:
    passed: bool
    max_alpha_p: float
    threshold: float
    alpha_p: dict
    alpha_a: dict
    replicate_mean: dict = field(default_factory=dict)
    replicate_std: dict = field(default_factory=dict)


def monitor_convergence(reports: TrainReport | Sequence[TrainReport],
                        threshold: float = 0.02) -> Convergence:
    """Pass iff every run ends with max alpha_P below ``threshold``.

    Across several replicate reports, also returns the mean and standard
    deviation of each final alpha_A statistic.
    """
    if isinstance(reports, TrainReport):
        reports = [reports]
    reports = list(reports)
    if not reports:
        raise ContractViolation("monitor_convergence: no reports")
    maxima = [max(final_alpha_p(r), default=0.0) for r in reports]
    per_run = [alpha_stats(final_alpha_a(r)) for r in reports]
    keys = ("min", "max", "mean", "median")
    mean = {k: float(np.mean([s[k] for s in per_run])) for k in keys}
    std = {k: float(np.std([s[k] for s in per_run])) for k in keys}
    worst = float(max(maxima))
    return Convergence(
        passed=worst < threshold, max_alpha_p=worst, threshold=threshold,
        alpha_p=alpha_stats([v for r in reports for v in final_alpha_p(r)]),
        alpha_a=alpha_stats([v for r in reports for v in final_alpha_a(r)]),
        replicate_mean=mean, replicate_std=std)
