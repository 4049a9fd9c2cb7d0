"""Paired multi-seed comparison of training methods, ablations and K-scaling.

Every method sees the same dataset per seed. Methods that train auxiliary
structure are pruned to the primary path before any test metric is
computed, and the test forward pass is checked to touch no auxiliary
parameter.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import stats

from . import archnet, flops, taskgen, trainer
from .archnet import PRIMARY, AuxNetwork, BranchSpec
from .autodiff import Tape
from .exceptions import ContractViolation, TrainingDiverged
from .taskgen import Dataset, TaskFamily
from .trainer import TrainConfig

logger = logging.getLogger(__name__)

# method name -> (build mode, granularity, train-config overrides)
METHODS = {
    "single": ("single", "layer", {}),
    "aux_head": ("aux_head", "layer", {}),
    "symmetric": ("symmetric", "layer", {}),
    "aux_g_stage": ("aux_g", "stage", {}),
    "aux_g_layer": ("aux_g", "layer", {}),
    "aux_nas": ("aux_nas", "layer", {}),
    # ablation grid: gradients only / gradients + search / gradients + features + search
    "gradient": ("aux_g", "layer", {}),
    "gradient_nas": ("aux_nas", "layer", {"freeze_alpha_p": True}),
    "gradient_feature_nas": ("aux_nas", "layer", {}),
}
ABLATION = ("gradient", "gradient_nas", "gradient_feature_nas")


# ---------------------------------------------------------------------------
# metrics


def metrics(pred, labels, kind: str) -> dict:
    """Accuracy for classification; MSE and RMSE for regression."""
    pred = np.asarray(pred, dtype=np.float64)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ContractViolation("metrics: empty test set")
    if kind == "classification":
        if pred.ndim != 2 or pred.shape[0] != labels.shape[0]:
            raise ContractViolation(f"metrics: logits {pred.shape} vs labels {labels.shape}")
        return {"accuracy": float(np.mean(np.argmax(pred, axis=1) == labels))}
    target = labels.astype(np.float64).reshape(pred.shape)
    mse = float(np.mean((pred - target) ** 2))
    return {"mse": mse, "rmse": float(np.sqrt(mse))}


def evaluate(net: AuxNetwork, x, y, kind: str, guard: bool = True) -> dict:
    """Primary-task metrics of ``net`` in eval mode.

    With ``guard`` the forward pass is recorded and must not read any
    auxiliary-branch parameter or architecture weight.
    """
    tape = Tape() if guard else None
    out = archnet.forward(net, x, tape, training=False, primary_only=True)[PRIMARY]
    if guard:
        touched = [n for n in tape._leaves if n.startswith("aux") or n.startswith("alpha.")]
        if touched:
            raise ContractViolation(f"evaluation purity: test pass read {touched[:3]}")
    return metrics(out.data, y, kind)


# ---------------------------------------------------------------------------
# protocol


@dataclass
class Protocol:
    methods: Sequence[str] = ("single", "aux_g_layer", "aux_nas")
    seeds: Sequence[int] = (0, 1, 2, 3, 4)
    family: dict | None = None
    n_samples: int = 4000
    split_fractions: Sequence[float] = taskgen.DEFAULT_FRACTIONS
    csv_path: str | None = None
    csv_schema: dict | None = None
    primary: BranchSpec = field(default_factory=lambda: BranchSpec((32, 32, 32, 32)))
    auxiliaries: Sequence[BranchSpec] = field(default_factory=lambda: [BranchSpec((32, 32, 32, 32))])
    window: int = 3
    stage_size: int = 2
    train: TrainConfig = field(default_factory=TrainConfig)
    overrides: dict = field(default_factory=dict)
    match_w_steps: bool = True

    def __post_init__(self):
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ContractViolation(f"unknown methods: {unknown}")
        if (self.family is None) == (self.csv_path is None):
            raise ContractViolation("protocol needs exactly one of family or csv_path")

    def dataset(self, seed: int) -> Dataset:
        if self.family is not None:
            return taskgen.generate(TaskFamily(**self.family), self.n_samples, seed,
                                    self.split_fractions)
        schema = taskgen.CsvSchema.from_dict(self.csv_schema)
        return taskgen.load_csv(self.csv_path, schema, seed)


@dataclass
class ResultTable:
    """Raw per (method, seed, metric) cells plus paired comparisons."""

    cells: list[dict] = field(default_factory=list)

    def add(self, method: str, seed: int, metric: str, value: float, status: str = "ok") -> None:
        self.cells.append({"method": method, "seed": int(seed), "metric": metric,
                           "value": float(value), "status": status})

    def methods(self) -> list[str]:
        return list(dict.fromkeys(c["method"] for c in self.cells))

    def values(self, method: str, metric: str) -> dict[int, float]:
        return {c["seed"]: c["value"] for c in self.cells
                if c["method"] == method and c["metric"] == metric and c["status"] == "ok"}

    def aggregate(self, method: str, metric: str) -> dict:
        v = np.asarray(list(self.values(method, metric).values()))
        if v.size == 0:
            return {"mean": float("nan"), "std": float("nan"), "n": 0}
        return {"mean": float(v.mean()), "std": float(v.std(ddof=1)) if v.size > 1 else 0.0,
                "n": int(v.size)}

    def paired_differences(self, method: str, metric: str, baseline: str = "single") -> dict[int, float]:
        a, b = self.values(method, metric), self.values(baseline, metric)
        return {s: a[s] - b[s] for s in sorted(set(a) & set(b))}

    def paired_test(self, method: str, metric: str, baseline: str = "single",
                    alternative: str = "less") -> dict:
        """One-sided paired t-test of ``method`` against ``baseline`` over shared seeds."""
        a, b = self.values(method, metric), self.values(baseline, metric)
        seeds = sorted(set(a) & set(b))
        if len(seeds) < 3:
            raise ContractViolation("paired_test: need at least 3 paired seeds")
        res = stats.ttest_rel([a[s] for s in seeds], [b[s] for s in seeds], alternative=alternative)
        return {"statistic": float(res.statistic), "pvalue": float(res.pvalue), "n": len(seeds)}

    def summary(self) -> list[dict]:
        rows = []
        metrics_ = list(dict.fromkeys(c["metric"] for c in self.cells if c["status"] == "ok"))
        for m in self.methods():
            for metric in metrics_:
                agg = self.aggregate(m, metric)
                if agg["n"]:
                    rows.append({"method": m, "metric": metric, **agg})
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "seed", "metric", "value", "status"])
        for c in self.cells:
            w.writerow([c["method"], c["seed"], c["metric"], repr(c["value"]), c["status"]])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"cells": self.cells, "summary": self.summary()}, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ResultTable":
        return cls(json.loads(text)["cells"])


def build_method(method: str, p: Protocol, input_dim: int, seed: int) -> tuple[AuxNetwork, TrainConfig]:
    mode, granularity, extra = METHODS[method]
    net = archnet.build(p.primary, p.auxiliaries, input_dim, mode, p.window, granularity,
                        p.stage_size, seed)
    cfg = replace(p.train, seed=seed, **extra, **p.overrides.get(method, {}))
    if mode == "aux_nas" and p.match_w_steps:
        # each search step spends half its samples on the architecture batch
        cfg = replace(cfg, epochs=2 * cfg.epochs)
    return net, cfg


def run_method(method: str, p: Protocol, ds: Dataset, seed: int) -> dict:
    """Train one method on one seed; returns metrics and the training report."""
    x_tr, y_tr = ds.split("train")
    x_te, y_te = ds.split("test")
    net, cfg = build_method(method, p, x_tr.shape[1], seed)
    try:
        report = trainer.train(net, x_tr, y_tr, cfg)
    except TrainingDiverged as exc:
        logger.warning("%s seed %d diverged: %s", method, seed, exc)
        return {"status": "failed", "metrics": {}, "report": None}
    drift = archnet.alpha_p_drift(net, x_te) if net.mode == "aux_nas" else 0.0
    pruned = archnet.prune(net) if net.mode != "symmetric" else net
    out = evaluate(pruned, x_te, y_te[0], ds.kinds[0], guard=pruned.mode == "pruned")
    return {"status": "ok", "metrics": out, "report": report, "alpha_p_drift": drift}


def _job(args):
    method, p, seed = args
    ds = p.dataset(seed)
    res = run_method(method, p, ds, seed)
    res["fingerprint"] = ds.fingerprint()
    return method, seed, res


def run_protocol(p: Protocol, jobs: int = 1, reports: dict | None = None) -> ResultTable:
    """Train and evaluate every (method, seed) pair; a failed cell does not stop the run."""
    tasks = [(m, p, s) for s in p.seeds for m in p.methods]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_job, tasks))
    else:
        results = [_job(t) for t in tasks]
    table = ResultTable()
    prints: dict[int, set] = {}
    for method, seed, res in results:
        prints.setdefault(seed, set()).add(res["fingerprint"])
        if res["status"] != "ok":
            table.add(method, seed, "primary", float("nan"), "failed")
            continue
        for metric, value in res["metrics"].items():
            table.add(method, seed, metric, value)
        if reports is not None:
            reports[(method, seed)] = res["report"]
    for seed, fp in prints.items():
        if len(fp) != 1:
            raise ContractViolation(f"paired fairness: methods saw different data for seed {seed}")
    return table


def ablation_ordering(table: ResultTable, metric: str = "mse", lower_is_better: bool = True) -> dict:
    """Seeds on which the ablation grid is monotonically non-worsening."""
    cols = [table.values(m, metric) for m in ABLATION]
    seeds = sorted(set.intersection(*(set(c) for c in cols)))
    ok = []
    for s in seeds:
        v = [c[s] for c in cols]
        if not lower_is_better:
            v = [-u for u in v]
        ok.append(bool(v[0] >= v[1] >= v[2]))
    return {"seeds": seeds, "monotone": ok, "count": int(sum(ok))}


# ---------------------------------------------------------------------------
# baselines and scaling


def aux_head_baseline(primary: BranchSpec, auxiliaries: Sequence[BranchSpec], x, targets,
                      cfg: TrainConfig, seed: int = 0) -> AuxNetwork:
    """Hard-sharing baseline: one trunk, one head per task, joint loss."""
    mode = "aux_head" if auxiliaries else "single"
    net = archnet.build(primary, auxiliaries, np.asarray(x).shape[1], mode, seed=seed)
    trainer.train(net, x, targets, replace(cfg, seed=seed))
    return net


def scaling_study(K_list: Sequence[int] = (1, 2, 3), primary: BranchSpec | None = None,
                  aux: BranchSpec | None = None, input_dim: int = 16, batch_size: int = 32,
                  window: int = 3, seed: int = 0, timing_repeats: int = 3) -> dict:
    """Per-K training cost of one search step and pruned inference cost.

    Fits ``cost ~ a * (K+1) * |w| + b * K * |alpha|`` by least squares and
    reports its R^2.
    """
    primary = primary or BranchSpec((32, 32, 32, 32))
    aux = aux or primary
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2 * batch_size, input_dim))
    rows = []
    for K in K_list:
        if K < 1:
            raise ContractViolation("scaling_study: K must be >= 1")
        net = archnet.build(primary, [aux] * K, input_dim, "aux_nas", window, seed=seed)
        targets = [rng.normal(size=(2 * batch_size, primary.out_dim))] + \
                  [rng.normal(size=(2 * batch_size, aux.out_dim)) for _ in range(K)]
        bw, ba = np.arange(batch_size), np.arange(batch_size, 2 * batch_size)
        probe = net.copy()
        opt_w, opt_a = trainer.Optimizer("sgd", 0.0, 0.9), trainer.Optimizer("sgd", 0.0)
        out = trainer.alternate_step(probe, x, targets, bw, ba, opt_w, opt_a, 1.0)
        times = []
        for _ in range(timing_repeats):
            t0 = time.perf_counter()
            trainer.alternate_step(probe, x, targets, bw, ba, opt_w, opt_a, 1.0)
            times.append(time.perf_counter() - t0)
        w_per_branch = net.params.count(["primary"])
        alpha_per_pair = len(net.params.names("alpha_P")) // K + len(net.params.names("alpha_A")) // K
        rows.append({
            "K": K,
            "op_count": int(out["ops"]),
            "wall_ms": 1e3 * float(np.median(times)),
            "w_per_branch": w_per_branch,
            "alpha_per_pair": alpha_per_pair,
            "pruned_inference_ops": flops.measure_inference(archnet.prune(net), batch_size).total,
        })
    A = np.array([[(r["K"] + 1) * r["w_per_branch"], r["K"] * r["alpha_per_pair"]] for r in rows],
                 dtype=np.float64)
    c = np.array([r["op_count"] for r in rows], dtype=np.float64)
    coef, *_ = np.linalg.lstsq(A, c, rcond=None)
    resid = c - A @ coef
    ss_tot = float(np.sum((c - c.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    by_k = {r["K"]: r for r in rows}
    ratio = by_k[2]["op_count"] / by_k[1]["op_count"] if 1 in by_k and 2 in by_k else None
    return {"rows": rows, "coef": [float(v) for v in coef], "r2": r2, "ratio_2_1": ratio}


# ---------------------------------------------------------------------------
# plot data


def write_gnuplot(report: trainer.TrainReport, path) -> None:
    """Whitespace-delimited loss and alpha trajectories, one row per step."""
    cols = ("step", "L_P", "L_A", "R", "lambda", "alphaP_max", "alphaP_mean", "alphaA_mean")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# " + " ".join(cols) + "\n")
        for row in report.steps:
            fh.write(" ".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                              for c in cols) + "\n")
