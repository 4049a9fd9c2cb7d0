"""Synthetic related-task families, CSV ingestion and seeded batch iteration.

A :class:`TaskFamily` owns a frozen teacher: one shared trunk plus one
private trunk per task, each a 2-layer tanh network of width 32 reading
its own block of a fixed random rotation of the input. Task ``t`` sees
features ``sqrt(rho) * shared + sqrt(1 - rho) * private_t``; with
``rho = 0`` the labels of different tasks are statistically independent,
with ``rho = 1`` they derive from the shared trunk alone.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .exceptions import ConfigurationError, ContractViolation, ParseError, SchemaError

SPLITS = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.7, 0.15, 0.15)
TEACHER_WIDTH = 32


def iterate_indices(n: int, batch_size: int, seed, disjoint_pairs: bool = False,
                    drop_last: bool = True) -> list:
    """Batches of indices drawn from one seeded permutation of ``range(n)``.

    With ``disjoint_pairs`` the permutation is cut into consecutive chunks of
    ``2 * batch_size`` and each chunk yields ``(batch_w, batch_alpha)``, so
    no sample lands in both roles within an epoch.
    """
    if batch_size < 1:
        raise ContractViolation("batch_size must be positive")
    if disjoint_pairs and batch_size > n // 2:
        raise ContractViolation(f"batch_size {batch_size} exceeds half the split ({n})")
    perm = np.random.default_rng(seed).permutation(n)
    if disjoint_pairs:
        step = 2 * batch_size
        return [(perm[s:s + batch_size], perm[s + batch_size:s + step])
                for s in range(0, n - step + 1, step)]
    stop = n - batch_size + 1 if drop_last else n
    return [perm[s:s + batch_size] for s in range(0, max(stop, 0), batch_size)]


def _trunk(rng: np.random.Generator, n_in: int, width: int) -> tuple:
    w1 = rng.normal(0.0, 1.0 / np.sqrt(n_in), (n_in, width))
    b1 = rng.normal(0.0, 0.1, width)
    w2 = rng.normal(0.0, 1.0 / np.sqrt(width), (width, width))
    b2 = rng.normal(0.0, 0.1, width)
    return w1, b1, w2, b2


def _run_trunk(params: tuple, z: np.ndarray) -> np.ndarray:
    w1, b1, w2, b2 = params
    return np.tanh(np.tanh(z @ w1 + b1) @ w2 + b2)


@dataclass
class TaskFamily:
    """Teacher for one primary task (index 0) and ``n_aux`` auxiliary tasks.

    ``kinds[t]`` is ``regression`` or ``classification``; ``out_dims[t]`` is
    the regression output size or the class count.
    """

    input_dim: int = 16
    n_aux: int = 1
    relatedness: float = 0.9
    noise_std: Sequence[float] = (0.0, 0.0)
    kinds: Sequence[str] = ("regression", "regression")
    out_dims: Sequence[int] = (1, 1)
    shared_head: bool = False
    label_flip: float = 0.0
    teacher_seed: int = 0
    _teacher: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        n_tasks = self.n_aux + 1
        self.noise_std = tuple(float(s) for s in self.noise_std)
        self.kinds = tuple(self.kinds)
        self.out_dims = tuple(int(d) for d in self.out_dims)
        if not 0.0 <= self.relatedness <= 1.0:
            raise ConfigurationError(f"relatedness must lie in [0, 1], got {self.relatedness}")
        if len(self.noise_std) != n_tasks or len(self.kinds) != n_tasks or len(self.out_dims) != n_tasks:
            raise ConfigurationError(f"noise_std, kinds and out_dims need {n_tasks} entries")
        if self.n_aux < 0 or self.input_dim < self.n_aux + 2:
            raise ConfigurationError(f"input_dim must be >= n_aux + 2 (got {self.input_dim})")
        for kind, dim in zip(self.kinds, self.out_dims):
            if kind not in ("regression", "classification"):
                raise ConfigurationError(f"unknown task kind {kind!r}")
            if dim < 1 or (kind == "classification" and dim < 2):
                raise ConfigurationError(f"invalid output size {dim} for {kind}")
        if self.shared_head and len(set(zip(self.kinds, self.out_dims))) != 1:
            raise ConfigurationError("shared_head needs identical task kinds and output sizes")
        if not 0.0 <= self.label_flip <= 1.0:
            raise ConfigurationError("label_flip must lie in [0, 1]")
        self._teacher = self._build_teacher()

    @property
    def n_tasks(self) -> int:
        return self.n_aux + 1

    def _build_teacher(self) -> dict:
        rng = np.random.default_rng([self.teacher_seed, 0x7EAC])
        q, _ = np.linalg.qr(rng.normal(size=(self.input_dim, self.input_dim)))
        n_blocks = self.n_tasks + 1
        block = self.input_dim // n_blocks
        slices = [slice(b * block, (b + 1) * block) for b in range(n_blocks)]
        trunks = [_trunk(rng, block, TEACHER_WIDTH) for _ in range(n_blocks)]
        heads = []
        for t in range(self.n_tasks):
            if self.shared_head and t > 0:
                heads.append(heads[0])
                continue
            w = rng.normal(0.0, 1.0 / np.sqrt(TEACHER_WIDTH), (TEACHER_WIDTH, self.out_dims[t]))
            heads.append(w)
        teacher = {"rotation": q, "slices": slices, "trunks": trunks, "heads": heads}
        ref = rng.normal(size=(2048, self.input_dim))
        raw = self._raw_outputs(teacher, ref)
        teacher["shift"] = [r.mean(axis=0) for r in raw]
        teacher["scale"] = [np.where(r.std(axis=0) > 0, r.std(axis=0), 1.0) for r in raw]
        if self.shared_head:
            for t in range(1, self.n_tasks):
                teacher["shift"][t] = teacher["shift"][0]
                teacher["scale"][t] = teacher["scale"][0]
        return teacher

    def _raw_outputs(self, teacher: dict, x: np.ndarray) -> list[np.ndarray]:
        z = x @ teacher["rotation"]
        feats = [_run_trunk(p, z[:, s]) for p, s in zip(teacher["trunks"], teacher["slices"])]
        a, b = np.sqrt(self.relatedness), np.sqrt(1.0 - self.relatedness)
        return [(a * feats[0] + b * feats[1 + t]) @ teacher["heads"][t] for t in range(self.n_tasks)]

    def teacher_outputs(self, x: np.ndarray) -> list[np.ndarray]:
        """Standardized noiseless teacher outputs (regression values or logits)."""
        raw = self._raw_outputs(self._teacher, np.asarray(x, dtype=np.float64))
        return [(r - m) / s for r, m, s in zip(raw, self._teacher["shift"], self._teacher["scale"])]

    def manifest(self) -> dict:
        return {"input_dim": self.input_dim, "n_aux": self.n_aux,
                "relatedness": self.relatedness, "noise_std": list(self.noise_std),
                "kinds": list(self.kinds), "out_dims": list(self.out_dims),
                "shared_head": self.shared_head, "label_flip": self.label_flip,
                "teacher_seed": self.teacher_seed}


@dataclass
class Dataset:
    """Inputs, per-task labels and disjoint split indices. Treat as immutable."""

    inputs: np.ndarray
    labels: list[np.ndarray]
    kinds: tuple[str, ...]
    splits: dict[str, np.ndarray]
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.inputs)
        if any(len(y) != n for y in self.labels):
            raise ContractViolation("every label array must match the number of inputs")
        seen = np.concatenate([self.splits[s] for s in SPLITS]) if self.splits else np.array([])
        if len(np.unique(seen)) != len(seen):
            raise ContractViolation("dataset splits overlap")

    @property
    def n_tasks(self) -> int:
        return len(self.labels)

    def split(self, name: str) -> tuple[np.ndarray, list[np.ndarray]]:
        idx = self.splits[name]
        return self.inputs[idx], [y[idx] for y in self.labels]

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256(np.ascontiguousarray(self.inputs).tobytes())
        for y in self.labels:
            h.update(np.ascontiguousarray(y).tobytes())
        for s in SPLITS:
            h.update(np.ascontiguousarray(self.splits[s]).tobytes())
        return h.hexdigest()

    def manifest(self) -> dict:
        return {"seed": self.seed, "n_samples": int(len(self.inputs)),
                "input_dim": int(self.inputs.shape[1]), "kinds": list(self.kinds),
                "split_sizes": {s: int(len(self.splits[s])) for s in SPLITS}, **self.meta}


def split_indices(n: int, seed, fractions: Sequence[float] = DEFAULT_FRACTIONS) -> dict[str, np.ndarray]:
    """Seeded train/val/test partition; test takes whatever train and val leave."""
    f_train, f_val = check_fractions(fractions)[:2]
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(f_train * n))
    n_val = int(round(f_val * n))
    return {"train": np.sort(perm[:n_train]), "val": np.sort(perm[n_train:n_train + n_val]),
            "test": np.sort(perm[n_train + n_val:])}


def check_fractions(fractions: Sequence[float]) -> tuple[float, float, float]:
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3 or min(fr) < 0 or fr[0] <= 0 or fr[2] <= 0 or abs(sum(fr) - 1.0) > 1e-9:
        raise ConfigurationError(f"split fractions must be 3 non-negative values summing to 1 "
                                 f"with non-empty train and test, got {fractions}")
    return fr


def generate(family: TaskFamily, n_samples: int, seed: int = 0,
             fractions: Sequence[float] = DEFAULT_FRACTIONS) -> Dataset:
    """Draw ``n_samples`` labelled inputs and a seeded train/val/test split (70/15/15 by default)."""
    if n_samples < 30:
        raise ConfigurationError(f"n_samples must be >= 30, got {n_samples}")
    rng = np.random.default_rng([seed, 0xDA7A])
    x = rng.normal(size=(n_samples, family.input_dim))
    outs = family.teacher_outputs(x)
    labels = []
    for t, (kind, out) in enumerate(zip(family.kinds, outs)):
        task_rng = np.random.default_rng([seed, 0x1AB, t])
        if kind == "regression":
            noise = task_rng.normal(size=out.shape) * family.noise_std[t]
            labels.append(out + noise)
        else:
            y = np.argmax(out, axis=1)
            if family.label_flip:
                flip = task_rng.random(n_samples) < family.label_flip
                shift = task_rng.integers(1, family.out_dims[t], n_samples)
                y = np.where(flip, (y + shift) % family.out_dims[t], y)
            labels.append(y.astype(np.int64))
    splits = split_indices(n_samples, [seed, 0x5B17], fractions)
    return Dataset(x, labels, tuple(family.kinds), splits, seed,
                   {"family": family.manifest(), "split_fractions": list(check_fractions(fractions))})


# ---------------------------------------------------------------------------
# CSV


@dataclass(frozen=True)
class CsvSchema:
    """Column roles: input columns, label columns per task, task kinds."""

    inputs: tuple[str, ...]
    labels: tuple[tuple[str, ...], ...]
    kinds: tuple[str, ...]
    split: str | None = "split"

    @classmethod
    def for_dataset(cls, ds: Dataset) -> "CsvSchema":
        inputs = tuple(f"x{i}" for i in range(ds.inputs.shape[1]))
        labels = []
        for t, y in enumerate(ds.labels):
            if y.ndim == 1:
                labels.append((f"y{t}",))
            else:
                labels.append(tuple(f"y{t}_{j}" for j in range(y.shape[1])))
        return cls(inputs, tuple(labels), ds.kinds)

    @classmethod
    def from_dict(cls, doc: dict) -> "CsvSchema":
        try:
            return cls(tuple(doc["inputs"]), tuple(tuple(c) for c in doc["labels"]),
                       tuple(doc["kinds"]), doc.get("split", "split"))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"invalid CSV schema: {exc}") from exc

    def to_dict(self) -> dict:
        return {"inputs": list(self.inputs), "labels": [list(c) for c in self.labels],
                "kinds": list(self.kinds), "split": self.split}


def write_csv(ds: Dataset, path, schema: CsvSchema | None = None) -> CsvSchema:
    schema = schema or CsvSchema.for_dataset(ds)
    split_of = np.empty(len(ds.inputs), dtype=object)
    for s in SPLITS:
        split_of[ds.splits[s]] = s
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = list(schema.inputs) + [c for cols in schema.labels for c in cols]
        if schema.split:
            header.append(schema.split)
        w.writerow(header)
        for i in range(len(ds.inputs)):
            row = [repr(float(v)) for v in ds.inputs[i]]
            for kind, y in zip(ds.kinds, ds.labels):
                vals = np.atleast_1d(y[i])
                row += [str(int(v)) if kind == "classification" else repr(float(v)) for v in vals]
            if schema.split:
                row.append(split_of[i])
            w.writerow(row)
    return schema


def load_csv(path, schema: CsvSchema, seed: int = 0) -> Dataset:
    """Read a header-row CSV; rows without a split column get a seeded 70/15/15 split."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1) from None
        col = {name: i for i, name in enumerate(header)}
        needed = list(schema.inputs) + [c for cols in schema.labels for c in cols]
        missing = [c for c in needed if c not in col]
        if missing:
            raise SchemaError(f"missing columns: {', '.join(missing)}")
        use_split = schema.split is not None and schema.split in col
        xs, ys, tags = [], [[] for _ in schema.labels], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
            try:
                xs.append([float(row[col[c]]) for c in schema.inputs])
                for t, (kind, cols) in enumerate(zip(schema.kinds, schema.labels)):
                    if kind == "classification":
                        ys[t].append(int(row[col[cols[0]]]))
                    else:
                        ys[t].append([float(row[col[c]]) for c in cols])
            except ValueError as exc:
                raise ParseError(str(exc), line) from None
            if use_split:
                tag = row[col[schema.split]]
                if tag not in SPLITS:
                    raise ParseError(f"unknown split tag {tag!r}", line)
                tags.append(tag)
    if not xs:
        raise ParseError("no data rows", 2)
    x = np.asarray(xs, dtype=np.float64)
    labels = []
    for kind, y in zip(schema.kinds, ys):
        labels.append(np.asarray(y, dtype=np.int64) if kind == "classification"
                      else np.asarray(y, dtype=np.float64))
    if use_split:
        tags = np.asarray(tags)
        splits = {s: np.flatnonzero(tags == s) for s in SPLITS}
    else:
        splits = split_indices(len(x), [seed, 0x5B17])
    return Dataset(x, labels, tuple(schema.kinds), splits, seed, {"source": str(path)})


def write_manifest(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(ds.manifest(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def iterate(ds: Dataset, batch_size: int, seed, split: str = "train",
            disjoint_pairs: bool = False) -> Iterator:
    """Yield index batches (or disjoint pairs) into the arrays of ``split``."""
    n = len(ds.splits[split])
    yield from iterate_indices(n, batch_size, seed, disjoint_pairs)
