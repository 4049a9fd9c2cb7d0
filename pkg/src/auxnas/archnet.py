"""Primary/auxiliary branch networks with cross-task fusion and pruning.

A network holds one primary branch and ``K`` auxiliary branches of equal
depth. Branch layer ``i`` computes ``h = act(h_{i-1} W_i + b_i)`` and then
fuses cross-task features into it::

    F_i = act(norm(h + proj(concat(alpha_k * src_k))))

Layer 0 is the stem output; cross-task sources are fused features of
other branches at layers ``j < i`` with ``i - j <= window``.

Modes
-----
``single``     primary branch only (fusion norm/activation, no sources)
``aux_head``   primary trunk shared by every task, one head per task
``symmetric``  every branch fuses every other branch's layer ``i - 1``
``aux_g``      fixed primary-to-auxiliary links only
``aux_nas``    bi-directional links gated by architecture weights
``pruned``     result of :func:`prune`; primary path only
"""

from __future__ import annotations

import base64
import graphlib
import json
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape, Tensor
from .exceptions import ConfigurationError, ContractViolation, SchemaError

MODES = ("single", "aux_head", "symmetric", "aux_g", "aux_nas", "pruned")
HEADS = ("regression", "classification")
LOSSES = ("mse", "xent", "cosine")
PRIMARY = "pri"
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class BranchSpec:
    """Layer widths and output head of one task branch."""

    layer_widths: tuple[int, ...]
    head: str = "regression"
    out_dim: int = 1
    stem_width: int | None = None
    loss: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if not self.layer_widths or min(self.layer_widths) < 1:
            raise ConfigurationError(f"layer_widths must be non-empty and positive: {self.layer_widths}")
        if self.head not in HEADS:
            raise ConfigurationError(f"unknown head kind {self.head!r}")
        if self.out_dim < 1 or (self.head == "classification" and self.out_dim < 2):
            raise ConfigurationError(f"invalid out_dim {self.out_dim} for {self.head} head")
        if self.stem_width is not None and self.stem_width < 1:
            raise ConfigurationError("stem_width must be positive")
        if self.loss is not None and self.loss not in LOSSES:
            raise ConfigurationError(f"unknown loss {self.loss!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths)

    def width(self, layer: int) -> int:
        """Feature width at ``layer``; layer 0 is the stem output."""
        if layer == 0:
            return self.stem_width or self.layer_widths[0]
        return self.layer_widths[layer - 1]

    @property
    def loss_kind(self) -> str:
        if self.loss is not None:
            return self.loss
        return "xent" if self.head == "classification" else "mse"

    def to_dict(self) -> dict:
        return {"layer_widths": list(self.layer_widths), "head": self.head,
                "out_dim": self.out_dim, "stem_width": self.stem_width, "loss": self.loss}


@dataclass(frozen=True)
class Connection:
    """Directed cross-task link from ``src_branch[src_layer]`` to ``dst_branch[dst_layer]``.

    ``alpha`` names the architecture weight gating the link, or is ``None``
    for a fixed indicator of 1.
    """

    src_branch: str
    dst_branch: str
    src_layer: int
    dst_layer: int
    alpha: str | None = None

    @property
    def direction(self) -> str:
        if self.dst_branch == PRIMARY:
            return "aux_to_pri"
        if self.src_branch == PRIMARY:
            return "pri_to_aux"
        return "aux_to_aux"

    @property
    def aux_task(self) -> int:
        other = self.src_branch if self.dst_branch == PRIMARY else self.dst_branch
        return int(other[3:]) if other.startswith("aux") else -1


@dataclass
class FusionLayer:
    """Parameters bound for one fusion call.

    ``projection`` is a bias-free (sum of source widths, dest width) matrix
    or ``None`` when the layer has no sources.
    """

    projection: Tensor | None
    gamma: Tensor | None
    beta: Tensor | None
    state: dict | None
    norm: str = "batch"
    activation: str = "relu"


def fuse(dest_prev: Tensor, sources: Sequence[tuple[Tensor, Tensor | None]],
         fusion: FusionLayer, training: bool = False) -> Tensor:
    """``act(norm(dest_prev + proj(concat(alpha_k * src_k))))``.

    A source with ``alpha=None`` enters unscaled. With no sources, or no
    projection, the projection branch is skipped entirely.
    """
    z = dest_prev
    if sources and fusion.projection is not None:
        parts = [src if alpha is None else ad.scale(src, alpha, tag="cross")
                 for src, alpha in sources]
        mixed = ad.linear(ad.concat(parts), fusion.projection, tag="projection")
        z = ad.add(z, mixed, tag="cross")
    if fusion.norm == "batch":
        z = ad.batchnorm(z, fusion.gamma, fusion.beta, training, fusion.state, tag="norm")
    if fusion.activation == "relu":
        z = ad.relu(z, tag="activation")
    return z


def _rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def branch_names(k: int) -> list[str]:
    return [PRIMARY] + [f"aux{t}" for t in range(k)]


def alpha_name(src_branch: str, src_layer: int, dst_branch: str, dst_layer: int) -> str:
    return f"alpha.{src_branch}:{src_layer}->{dst_branch}:{dst_layer}"


@dataclass
class AuxNetwork:
    input_dim: int
    primary: BranchSpec
    auxiliaries: list[BranchSpec]
    mode: str
    window: int = 3
    granularity: str = "layer"
    stage_size: int = 2
    norm: str = "batch"
    activation: str = "relu"
    block_activation: str = "identity"
    seed: int = 0
    connections: list[Connection] = field(default_factory=list)
    params: ParamStore = field(default_factory=ParamStore)
    buffers: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.auxiliaries)

    @property
    def n_layers(self) -> int:
        return self.primary.n_layers

    @property
    def branches(self) -> list[str]:
        if self.mode in ("single", "pruned", "aux_head"):
            return [PRIMARY]
        return branch_names(self.K)

    def spec_of(self, branch: str) -> BranchSpec:
        return self.primary if branch == PRIMARY else self.auxiliaries[int(branch[3:])]

    def incoming(self, branch: str, layer: int) -> list[Connection]:
        return [c for c in self.connections if c.dst_branch == branch and c.dst_layer == layer]

    def alpha_names(self, direction: str) -> list[str]:
        group = "alpha_P" if direction == "aux_to_pri" else "alpha_A"
        return self.params.names(group)

    def w_names(self) -> list[str]:
        return [n for n in self.params.names() if not n.startswith("alpha.")]

    def aux_exclusive_names(self) -> list[str]:
        """Parameters that live only on auxiliary branches or their gates."""
        return [n for n in self.params.names()
                if n.startswith("aux") or self.params.group_of(n) == "alpha_A"]

    def copy(self) -> "AuxNetwork":
        return AuxNetwork(
            self.input_dim, self.primary, list(self.auxiliaries), self.mode, self.window,
            self.granularity, self.stage_size, self.norm, self.activation,
            self.block_activation, self.seed, list(self.connections), self.params.copy(),
            {k: {s: v.copy() for s, v in st.items()} for k, st in self.buffers.items()})

    def fused_layers(self, branch: str = PRIMARY) -> int:
        """Number of layers on ``branch`` carrying fusion norm parameters."""
        return sum(1 for i in range(1, self.n_layers + 1) if f"{branch}.L{i}.gamma" in self.params)


# ---------------------------------------------------------------------------
# construction


def _connections(mode: str, names: list[str], n: int, window: int,
                 granularity: str, stage_size: int) -> list[Connection]:
    conns: list[Connection] = []
    auxes = names[1:]
    if mode == "symmetric":
        for i in range(1, n + 1):
            for dst in names:
                for src in names:
                    if src != dst:
                        conns.append(Connection(src, dst, i - 1, i))
    elif mode == "aux_g":
        dst_layers = [i for i in range(1, n + 1)
                      if granularity == "layer" or i % stage_size == 0]
        for aux in auxes:
            for i in dst_layers:
                for j in range(max(0, i - window), i):
                    conns.append(Connection(PRIMARY, aux, j, i))
    elif mode == "aux_nas":
        for i in range(1, n + 1):
            for aux in auxes:
                for j in range(max(0, i - window), i):
                    conns.append(Connection(aux, PRIMARY, j, i, alpha_name(aux, j, PRIMARY, i)))
            for aux in auxes:
                for j in range(max(0, i - window), i):
                    conns.append(Connection(PRIMARY, aux, j, i, alpha_name(PRIMARY, j, aux, i)))
    return conns


def build(primary: BranchSpec, auxiliaries: Sequence[BranchSpec], input_dim: int,
          mode: str = "aux_nas", window: int = 3, granularity: str = "layer",
          stage_size: int = 2, seed: int = 0, norm: str = "batch",
          activation: str = "relu", block_activation: str = "identity",
          alpha_init: float = 0.5) -> AuxNetwork:
    """Construct a network and initialize every parameter from ``seed``.

    Each parameter draws from its own stream keyed by ``(seed, name)``, so
    the primary branch is initialized identically in every mode.
    """
    if mode not in MODES or mode == "pruned":
        raise ConfigurationError(f"unknown build mode {mode!r}")
    if granularity not in ("layer", "stage"):
        raise ConfigurationError(f"unknown granularity {granularity!r}")
    if norm not in ("batch", "none") or activation not in ("relu", "identity") \
            or block_activation not in ("relu", "identity"):
        raise ConfigurationError("norm must be batch|none and activations relu|identity")
    if input_dim < 1 or window < 1:
        raise ConfigurationError("input_dim and window must be positive")
    auxiliaries = list(auxiliaries)
    if mode == "single":
        auxiliaries = []
    elif not auxiliaries:
        raise ConfigurationError(f"mode {mode!r} needs at least one auxiliary branch")
    n = primary.n_layers
    if granularity == "stage" and (stage_size < 1 or n % stage_size):
        raise ConfigurationError(f"stage size {stage_size} does not divide {n} layers")
    if mode not in ("aux_head",) and any(a.n_layers != n for a in auxiliaries):
        raise ConfigurationError("all branches must have the same number of layers")

    net = AuxNetwork(input_dim, primary, auxiliaries, mode, window, granularity,
                     stage_size, norm, activation, block_activation, seed)
    names = net.branches
    net.connections = _connections(mode, names, n, window, granularity, stage_size)
    store = net.params

    def he(name, fan_in, fan_out, gain=2.0):
        return _rng(seed, name).normal(0.0, np.sqrt(gain / fan_in), (fan_in, fan_out))

    for b in names:
        spec = net.spec_of(b)
        group = "primary" if b == PRIMARY else b
        w0 = spec.width(0)
        store.add(f"{b}.stem.W", he(f"{b}.stem.W", input_dim, w0), group)
        store.add(f"{b}.stem.b", np.zeros(w0), group)
        for i in range(1, n + 1):
            w_in, w_out = spec.width(i - 1), spec.width(i)
            store.add(f"{b}.L{i}.W", he(f"{b}.L{i}.W", w_in, w_out), group)
            store.add(f"{b}.L{i}.b", np.zeros(w_out), group)
        for i in range(1, n + 1):
            if norm == "batch":
                store.add(f"{b}.L{i}.gamma", np.asarray(1.0), "norm")
                store.add(f"{b}.L{i}.beta", np.asarray(0.0), "norm")
                net.buffers[f"{b}.L{i}"] = {"mean": np.zeros(spec.width(i)),
                                           "var": np.ones(spec.width(i))}
            incoming = net.incoming(b, i)
            if incoming:
                fan_in = sum(net.spec_of(c.src_branch).width(c.src_layer) for c in incoming)
                store.add(f"{b}.L{i}.proj", np.zeros((fan_in, spec.width(i))), "projection")
        store.add(f"{b}.head.W", he(f"{b}.head.W", spec.width(n), spec.out_dim, 1.0), group)
        store.add(f"{b}.head.b", np.zeros(spec.out_dim), group)

    if mode == "aux_head":
        wn = primary.width(n)
        for k, spec in enumerate(auxiliaries):
            name = f"aux{k}.head.W"
            store.add(name, he(name, wn, spec.out_dim, 1.0), f"aux{k}")
            store.add(f"aux{k}.head.b", np.zeros(spec.out_dim), f"aux{k}")

    for c in net.connections:
        if c.alpha is not None:
            group = "alpha_P" if c.direction == "aux_to_pri" else "alpha_A"
            store.add(c.alpha, np.asarray(float(alpha_init)), group)
    check_acyclic(net)
    return net


def check_acyclic(net: AuxNetwork) -> None:
    """Raise :class:`ContractViolation` if the layer graph has a cycle or a bad link."""
    graph: dict[tuple[str, int], set[tuple[str, int]]] = {}
    for b in net.branches:
        for i in range(1, net.n_layers + 1):
            graph.setdefault((b, i), set()).add((b, i - 1))
    for c in net.connections:
        if not c.src_layer < c.dst_layer:
            raise ContractViolation(f"connection {c} is not forward-only")
        if c.dst_layer - c.src_layer > net.window and net.mode != "symmetric":
            raise ContractViolation(f"connection {c} exceeds window {net.window}")
        if c.direction == "aux_to_aux" and net.mode != "symmetric":
            raise ContractViolation(f"auxiliary-to-auxiliary connection {c}")
        graph.setdefault((c.dst_branch, c.dst_layer), set()).add((c.src_branch, c.src_layer))
    try:
        tuple(graphlib.TopologicalSorter(graph).static_order())
    except graphlib.CycleError as exc:
        raise ContractViolation(f"cycle in network graph: {exc.args[1]}") from exc


# ---------------------------------------------------------------------------
# forward passes


def bind(net: AuxNetwork, tape: Tape | None = None, values: dict | None = None):
    """Parameter lookup by name: ``values`` first, then tape leaves or constants."""
    if values is not None:
        fallback = bind(net, tape)
        return lambda name: values[name] if name in values else fallback(name)
    if tape is None:
        return lambda name: Tensor(net.params[name])
    return lambda name: tape.param(net.params, name)


def _act(kind: str, x: Tensor) -> Tensor:
    return ad.relu(x, tag="block") if kind == "relu" else x


def stem(net: AuxNetwork, x, tape: Tape | None = None,
         branches: Sequence[str] | None = None, values: dict | None = None) -> dict[str, Tensor]:
    """Layer-0 features for each branch."""
    p = bind(net, tape, values)
    xt = x if isinstance(x, Tensor) else Tensor(x)
    if xt.data.ndim != 2 or xt.shape[1] != net.input_dim:
        raise ad.DimensionError(f"input shape {xt.shape} does not match input_dim {net.input_dim}")
    out = {}
    for b in branches or net.branches:
        out[b] = ad.relu(ad.linear(xt, p(f"{b}.stem.W"), p(f"{b}.stem.b"), tag="block"), tag="block")
    return out


def _needed(net: AuxNetwork, wanted: Sequence[str]) -> list[str]:
    """Branches whose features feed any of ``wanted``."""
    need = set(wanted)
    changed = True
    while changed:
        changed = False
        for c in net.connections:
            if c.dst_branch in need and c.src_branch not in need:
                need.add(c.src_branch)
                changed = True
    return [b for b in net.branches if b in need]


def forward_from(net: AuxNetwork, feats0: dict[str, Tensor], tape: Tape | None = None,
                 training: bool = False, heads: bool = True,
                 values: dict | None = None) -> dict[str, Tensor]:
    """Run layers ``1..n`` (and heads) from given layer-0 features.

    ``values`` overrides stored parameters by name (e.g. with tape leaves
    for gradient checking).
    """
    p = bind(net, tape, values)
    branches = [b for b in net.branches if b in feats0]
    feats = {b: [feats0[b]] for b in branches}
    for i in range(1, net.n_layers + 1):
        layer_out = {}
        for b in branches:
            h = _act(net.block_activation,
                     ad.linear(feats[b][i - 1], p(f"{b}.L{i}.W"), p(f"{b}.L{i}.b"), tag="block"))
            sources = [(feats[c.src_branch][c.src_layer],
                        None if c.alpha is None else p(c.alpha))
                       for c in net.incoming(b, i) if c.src_branch in feats]
            has_norm = net.norm == "batch"
            fusion = FusionLayer(
                p(f"{b}.L{i}.proj") if sources else None,
                p(f"{b}.L{i}.gamma") if has_norm else None,
                p(f"{b}.L{i}.beta") if has_norm else None,
                net.buffers.get(f"{b}.L{i}") if has_norm else None,
                net.norm, net.activation)
            layer_out[b] = fuse(h, sources, fusion, training)
        for b in branches:
            feats[b].append(layer_out[b])
    if not heads:
        return {b: feats[b][-1] for b in branches}
    out = {}
    for b in branches:
        out[b] = ad.linear(feats[b][-1], p(f"{b}.head.W"), p(f"{b}.head.b"), tag="head")
    if net.mode == "aux_head":
        trunk = feats[PRIMARY][-1]
        for k in range(net.K):
            out[f"aux{k}"] = ad.linear(trunk, p(f"aux{k}.head.W"), p(f"aux{k}.head.b"), tag="head")
    return out


def forward(net: AuxNetwork, x, tape: Tape | None = None, training: bool = False,
            primary_only: bool = False, values: dict | None = None) -> dict[str, Tensor]:
    """Outputs of every branch head, keyed by branch name.

    With ``primary_only`` only branches that feed the primary are computed.
    """
    branches = _needed(net, [PRIMARY]) if primary_only else net.branches
    feats0 = stem(net, x, tape, branches, values)
    return forward_from(net, feats0, tape, training, values=values)


def forward_symmetric(net: AuxNetwork, x, tape: Tape | None = None,
                      training: bool = False) -> dict[str, Tensor]:
    if net.mode != "symmetric":
        raise ContractViolation(f"forward_symmetric needs mode 'symmetric', got {net.mode!r}")
    return forward(net, x, tape, training)


def forward_asymmetric(net: AuxNetwork, x, tape: Tape | None = None,
                       training: bool = False) -> dict[str, Tensor]:
    """Forward pass of a network whose primary path takes no auxiliary features."""
    if net.mode not in ("aux_g", "aux_nas"):
        raise ContractViolation(f"forward_asymmetric needs aux_g or aux_nas, got {net.mode!r}")
    for c in net.connections:
        if c.direction == "aux_to_pri" and (c.alpha is None or net.params[c.alpha] != 0.0):
            raise ContractViolation(f"residual auxiliary-to-primary connection {c.alpha}")
    return forward(net, x, tape, training)


def predict(net: AuxNetwork, x) -> np.ndarray:
    """Primary-head output in eval mode."""
    return forward(net, x, None, False, primary_only=True)[PRIMARY].data


# ---------------------------------------------------------------------------
# losses


def branch_loss(spec: BranchSpec, out: Tensor, target) -> Tensor:
    kind = spec.loss_kind
    if kind == "xent":
        return ad.softmax_xent(out, target)
    target = np.asarray(target, dtype=np.float64).reshape(out.shape)
    if kind == "cosine":
        return ad.cosine_loss(out, target)
    return ad.mse(out, target)


def task_losses(net: AuxNetwork, outputs: dict[str, Tensor], targets: Sequence) -> dict[str, Tensor]:
    """Per-branch losses; ``targets[0]`` is primary, ``targets[1 + k]`` auxiliary ``k``."""
    losses = {PRIMARY: branch_loss(net.primary, outputs[PRIMARY], targets[0])}
    for k, spec in enumerate(net.auxiliaries):
        name = f"aux{k}"
        if name in outputs:
            losses[name] = branch_loss(spec, outputs[name], targets[1 + k])
    return losses


# ---------------------------------------------------------------------------
# pruning


def hard_zero_alpha_p(net: AuxNetwork) -> AuxNetwork:
    """Copy of ``net`` with every auxiliary-to-primary weight set to exactly 0."""
    out = net.copy()
    for name in out.params.names("alpha_P"):
        out.params[name] = 0.0
    return out


def alpha_p_drift(net: AuxNetwork, x) -> float:
    """Max |primary output change| caused by hard-zeroing the auxiliary-to-primary weights."""
    before = forward(net, x)[PRIMARY].data
    after = forward(hard_zero_alpha_p(net), x)[PRIMARY].data
    return float(np.max(np.abs(before - after)))


def prune(net: AuxNetwork) -> AuxNetwork:
    """Single-task inference network: the primary path plus its fusion norm/activation.

    Every auxiliary branch, cross-task connection and fusion projection is
    dropped. The surviving op sequence equals the primary path of the full
    network with all auxiliary-to-primary weights at 0.
    """
    if net.mode == "symmetric":
        raise ContractViolation("a symmetric network cannot be pruned to a single task")
    keep = {"primary", "norm"}
    store = ParamStore()
    for name in net.params.names():
        if name.startswith(f"{PRIMARY}.") and net.params.group_of(name) in keep:
            store.add(name, net.params[name].copy(), net.params.group_of(name))
    buffers = {k: {s: v.copy() for s, v in st.items()}
               for k, st in net.buffers.items() if k.startswith(f"{PRIMARY}.")}
    return AuxNetwork(net.input_dim, net.primary, [], "pruned", net.window,
                      net.granularity, net.stage_size, net.norm, net.activation,
                      net.block_activation, net.seed, [], store, buffers)


# ---------------------------------------------------------------------------
# parameter and cost accounting


def single_task_param_count(spec: BranchSpec, input_dim: int) -> int:
    """Parameters of the plain single-task network: stem, blocks, head."""
    total = input_dim * spec.width(0) + spec.width(0)
    for i in range(1, spec.n_layers + 1):
        total += spec.width(i - 1) * spec.width(i) + spec.width(i)
    total += spec.width(spec.n_layers) * spec.out_dim + spec.out_dim
    return total


def single_task_forward(net: AuxNetwork, x, tape: Tape | None = None) -> Tensor:
    """Primary output of the plain single-task network sharing ``net``'s weights.

    Every layer is ``relu(linear + bias)`` with no fusion norm; used as the
    cost baseline.
    """
    p = bind(net, tape)
    xt = x if isinstance(x, Tensor) else Tensor(x)
    h = ad.relu(ad.linear(xt, p(f"{PRIMARY}.stem.W"), p(f"{PRIMARY}.stem.b"), tag="block"), tag="block")
    for i in range(1, net.n_layers + 1):
        h = ad.relu(ad.linear(h, p(f"{PRIMARY}.L{i}.W"), p(f"{PRIMARY}.L{i}.b"), tag="block"),
                    tag="block")
    return ad.linear(h, p(f"{PRIMARY}.head.W"), p(f"{PRIMARY}.head.b"), tag="head")


# ---------------------------------------------------------------------------
# serialization


def _encode(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes(order="C")).decode("ascii")}


def _decode(blob: dict) -> np.ndarray:
    try:
        raw = base64.b64decode(blob["data"], validate=True)
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        return arr.reshape(tuple(blob["shape"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaError(f"malformed array blob: {exc}") from exc


def to_dict(net: AuxNetwork) -> dict:
    return {
        "format": "auxnas.network",
        "version": SCHEMA_VERSION,
        "mode": net.mode,
        "input_dim": net.input_dim,
        "window": net.window,
        "granularity": net.granularity,
        "stage_size": net.stage_size,
        "norm": net.norm,
        "activation": net.activation,
        "block_activation": net.block_activation,
        "seed": net.seed,
        "primary": net.primary.to_dict(),
        "auxiliaries": [a.to_dict() for a in net.auxiliaries],
        "connections": [
            {"src": c.src_branch, "src_layer": c.src_layer, "dst": c.dst_branch,
             "dst_layer": c.dst_layer, "alpha": c.alpha}
            for c in net.connections
        ],
        "alphas": {n: float(net.params[n]) for n in net.params.names()
                   if net.params.group_of(n) in ("alpha_P", "alpha_A")},
        "params": [{"name": n, "group": net.params.group_of(n), **_encode(v)}
                   for n, v in net.params.items()],
        "buffers": {k: {s: _encode(v) for s, v in sorted(st.items())}
                    for k, st in sorted(net.buffers.items())},
    }


def from_dict(doc: dict) -> AuxNetwork:
    if doc.get("format") != "auxnas.network":
        raise SchemaError("not an auxnas network document")
    if doc.get("version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported network schema version {doc.get('version')}")
    try:
        primary = BranchSpec(**doc["primary"])
        auxes = [BranchSpec(**a) for a in doc["auxiliaries"]]
        store = ParamStore()
        for p in doc["params"]:
            store.add(p["name"], _decode(p), p["group"])
        buffers = {k: {s: _decode(v) for s, v in st.items()} for k, st in doc["buffers"].items()}
        conns = [Connection(c["src"], c["dst"], c["src_layer"], c["dst_layer"], c["alpha"])
                 for c in doc["connections"]]
        net = AuxNetwork(doc["input_dim"], primary, auxes, doc["mode"], doc["window"],
                         doc["granularity"], doc["stage_size"], doc["norm"], doc["activation"],
                         doc["block_activation"], doc["seed"], conns, store, buffers)
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"network document missing or malformed field: {exc}") from exc
    if net.mode not in MODES:
        raise SchemaError(f"unknown mode {net.mode!r}")
    check_acyclic(net)
    return net


def save(net: AuxNetwork, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_dict(net), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load(path) -> AuxNetwork:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(doc)
