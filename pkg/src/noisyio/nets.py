"""Networks, flat parameter vectors, Adam, operator training and dropout."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidInput, IoError, NumericOverflow, ShapeError, TrainingDiverged
from .jets import MAX_ORDER, Jet, Tape

log = logging.getLogger(__name__)

ACTIVATIONS = ("tanh", "relu")
KINDS = ("mlp", "deeponet", "mio-deeponet")
SUBNETS = {"mlp": ("net",), "deeponet": ("branch", "trunk"), "mio-deeponet": ("branch1", "branch2", "trunk")}


# ---------------------------------------------------------------------------
# specs and parameter layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description.

    ``widths`` maps each subnetwork name to its layer widths including the
    input and output layers, e.g. ``{"net": (1, 50, 50, 1)}``.  Every hidden
    layer applies the subnetwork's activation; the final layer is affine.
    """

    kind: str
    widths: Mapping[str, tuple]
    activations: Mapping[str, str]
    p: int = 0
    output_bias: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown network kind {self.kind!r}")
        names = SUBNETS[self.kind]
        if set(self.widths) != set(names) or set(self.activations) != set(names):
            raise ShapeError(f"{self.kind} needs subnetworks {names}")
        object.__setattr__(self, "widths", {k: tuple(int(w) for w in self.widths[k]) for k in names})
        object.__setattr__(self, "activations", {k: self.activations[k] for k in names})
        for name in names:
            if self.activations[name] not in ACTIVATIONS:
                raise InvalidInput(f"unknown activation {self.activations[name]!r}")
            if len(self.widths[name]) < 2:
                raise ShapeError(f"subnetwork {name} needs at least input and output widths")
        if self.kind != "mlp":
            outs = {self.widths[n][-1] for n in names}
            if outs != {self.p}:
                raise ShapeError(f"branch/trunk output widths {outs} must all equal p={self.p}")

    @classmethod
    def mlp(cls, widths: Sequence[int], activation: str = "tanh") -> "NetworkSpec":
        return cls("mlp", {"net": tuple(widths)}, {"net": activation}, p=0, output_bias=False)

    @classmethod
    def deeponet(cls, n_sensors: int, trunk_dim: int, hidden: Sequence[int], p: int,
                 activation: str = "relu", output_bias: bool = True) -> "NetworkSpec":
        return cls(
            "deeponet",
            {"branch": (n_sensors, *hidden, p), "trunk": (trunk_dim, *hidden, p)},
            {"branch": activation, "trunk": activation},
            p=p,
            output_bias=output_bias,
        )

    @classmethod
    def mio_deeponet(cls, n_sensors: int, trunk_dim: int, hidden: Sequence[int], p: int,
                     activation: str = "relu", output_bias: bool = True) -> "NetworkSpec":
        return cls(
            "mio-deeponet",
            {
                "branch1": (n_sensors, *hidden, p),
                "branch2": (n_sensors, *hidden, p),
                "trunk": (trunk_dim, *hidden, p),
            },
            {"branch1": activation, "branch2": activation, "trunk": activation},
            p=p,
            output_bias=output_bias,
        )

    def subnets(self) -> tuple:
        return SUBNETS[self.kind]

    def layout(self) -> "ParamLayout":
        entries = []
        for name in self.subnets():
            w = self.widths[name]
            for i in range(len(w) - 1):
                entries.append((f"{name}.W{i}", (w[i], w[i + 1])))
                entries.append((f"{name}.b{i}", (w[i + 1],)))
        if self.kind != "mlp" and self.output_bias:
            entries.append(("bias", ()))
        return ParamLayout(tuple(entries))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "widths": {k: list(v) for k, v in self.widths.items()},
            "activations": dict(self.activations),
            "p": self.p,
            "output_bias": self.output_bias,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkSpec":
        return cls(d["kind"], {k: tuple(v) for k, v in d["widths"].items()}, dict(d["activations"]),
                   int(d["p"]), bool(d["output_bias"]))


@dataclass(frozen=True)
class ParamLayout:
    """Named, disjoint, contiguous slices of a flat float64 array."""

    entries: tuple

    def __post_init__(self):
        names = [n for n, _ in self.entries]
        if len(set(names)) != len(names):
            raise ShapeError("duplicate slice names in layout")
        object.__setattr__(self, "entries", tuple((n, tuple(int(s) for s in shp)) for n, shp in self.entries))

    @property
    def names(self) -> tuple:
        return tuple(n for n, _ in self.entries)

    @property
    def size(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.entries)

    def slices(self) -> dict:
        out, start = {}, 0
        for name, shape in self.entries:
            n = int(np.prod(shape))
            out[name] = (slice(start, start + n), shape)
            start += n
        return out

    def shape_of(self, name: str) -> tuple:
        return dict(self.entries)[name]

    def extend(self, *extra) -> "ParamLayout":
        return ParamLayout(self.entries + tuple(extra))

    def unflatten(self, flat: np.ndarray) -> dict:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.size,):
            raise ShapeError(f"flat vector of length {flat.shape} does not match layout size {self.size}")
        return {name: flat[sl].reshape(shape) for name, (sl, shape) in self.slices().items()}

    def flatten(self, parts: Mapping[str, np.ndarray]) -> np.ndarray:
        if set(parts) != set(self.names):
            raise ShapeError("parts do not match the layout names")
        out = np.empty(self.size)
        for name, (sl, shape) in self.slices().items():
            arr = np.asarray(parts[name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {arr.shape}")
            out[sl] = arr.ravel()
        return out

    def column_names(self) -> list:
        """One label per flat coordinate, used as the CSV header."""
        cols = []
        for name, shape in self.entries:
            if shape == ():
                cols.append(name)
            else:
                for idx in np.ndindex(*shape):
                    cols.append(name + "[" + ",".join(str(i) for i in idx) + "]")
        return cols

    def to_list(self) -> list:
        return [[n, list(s)] for n, s in self.entries]

    @classmethod
    def from_list(cls, items) -> "ParamLayout":
        return cls(tuple((n, tuple(s)) for n, s in items))


@dataclass
class ParamVector:
    values: np.ndarray
    layout: ParamLayout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.layout.size,):
            raise ShapeError(f"parameter vector length {self.values.shape} != layout size {self.layout.size}")

    def parts(self) -> dict:
        return self.layout.unflatten(self.values)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)


def init_params(spec: NetworkSpec, seed: int) -> ParamVector:
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases; zero output bias."""
    rng = np.random.default_rng(seed)
    layout = spec.layout()
    parts = {}
    for name, shape in layout.entries:
        if name == "bias":
            parts[name] = np.zeros(())
            continue
        sub, leaf = name.split(".")
        layer = int(leaf[1:])
        fan_in = spec.widths[sub][layer]
        bound = 1.0 / np.sqrt(fan_in)
        parts[name] = rng.uniform(-bound, bound, size=shape)
    return ParamVector(layout.flatten(parts), layout)


# ---------------------------------------------------------------------------
# forward passes (plain numpy)
# ---------------------------------------------------------------------------


def _act_np(name: str, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if name == "tanh" else np.maximum(z, 0.0)


def _subnet_np(spec: NetworkSpec, parts: Mapping, name: str, x: np.ndarray, masks=None) -> np.ndarray:
    widths = spec.widths[name]
    nlayers = len(widths) - 1
    h = x
    for i in range(nlayers):
        h = h @ parts[f"{name}.W{i}"] + parts[f"{name}.b{i}"]
        if i < nlayers - 1:
            h = _act_np(spec.activations[name], h)
            if masks is not None:
                h = h * masks[i]
    return h


def _as_parts(spec: NetworkSpec, params) -> dict:
    if isinstance(params, ParamVector):
        if params.layout.entries[: len(spec.layout().entries)] != spec.layout().entries:
            raise ShapeError("parameter layout does not match the network spec")
        return params.parts()
    if isinstance(params, Mapping):
        return dict(params)
    return spec.layout().unflatten(params)


def mlp_forward(spec: NetworkSpec, params, x) -> np.ndarray:
    """Evaluate an MLP on inputs ``x`` of shape ``(..., in)`` (or a 1-D point)."""
    if spec.kind != "mlp":
        raise InvalidInput("mlp_forward needs an mlp spec")
    parts = _as_parts(spec, params)
    x = np.asarray(x, dtype=np.float64)
    n_in = spec.widths["net"][0]
    if x.shape[-1:] != (n_in,):
        raise ShapeError(f"input trailing dimension {x.shape} does not match width {n_in}")
    return _subnet_np(spec, parts, "net", x)


# ---------------------------------------------------------------------------
# forward passes on a tape
# ---------------------------------------------------------------------------


def param_nodes(tape: Tape, layout: ParamLayout, flat: np.ndarray) -> dict:
    """Record every layout slice as a leaf variable on ``tape``."""
    return {name: tape.variable(arr, name) for name, arr in layout.unflatten(flat).items()}


def subnet_tape(tape: Tape, spec: NetworkSpec, nodes: Mapping, name: str, h: Jet, masks=None) -> Jet:
    """Record one subnetwork on ``tape``; ``nodes`` may hold leaves or constants."""
    widths = spec.widths[name]
    nlayers = len(widths) - 1
    act = spec.activations[name]
    for i in range(nlayers):
        h = tape.affine(h, nodes[f"{name}.W{i}"], nodes[f"{name}.b{i}"])
        if i < nlayers - 1:
            h = tape.tanh(h) if act == "tanh" else tape.relu(h)
            if masks is not None:
                h = tape.scale(h, masks[i])
    return h


def mlp_jet_forward(net: NetworkSpec, params, x: float, order: int = MAX_ORDER):
    """Jet ``(u, u', u'', u''')`` of a scalar MLP at ``x``.

    Returns the output jet.  The computation is recorded on ``jet.tape``;
    the input is the leaf ``"x"`` and parameters are leaves named by layout.
    """
    if net.kind != "mlp" or net.widths["net"][0] != 1 or net.widths["net"][-1] != 1:
        raise ShapeError("mlp_jet_forward needs a scalar-input scalar-output mlp")
    flat = params.values if isinstance(params, ParamVector) else np.asarray(params, dtype=np.float64)
    layout = net.layout()
    if flat.shape != (layout.size,):
        raise ShapeError(f"parameter length {flat.shape} does not match layout size {layout.size}")
    if not np.isfinite(x):
        raise InvalidInput(f"non-finite input {x!r}")
    tape = Tape()
    seed = tape.lift(tape.variable(np.float64(x), "x"), order)
    nodes = param_nodes(tape, layout, flat)
    out = subnet_tape(tape, net, nodes, "net", tape.reshape(seed, (1, 1)))
    return tape.reshape(out, ())


# ---------------------------------------------------------------------------
# operator networks
# ---------------------------------------------------------------------------


@dataclass
class OperatorModel:
    """A trained (Deep|MIO-Deep)ONet with its sensor grid and training record."""

    spec: NetworkSpec
    params: ParamVector
    grid: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.spec.kind == "mlp":
            raise InvalidInput("operator model needs a deeponet or mio-deeponet spec")
        n = self.spec.widths[self.spec.subnets()[0]][0]
        if self.grid.shape != (n,):
            raise ShapeError(f"sensor grid of shape {self.grid.shape} does not match branch width {n}")

    @property
    def n_sensors(self) -> int:
        return self.grid.shape[0]

    @property
    def trunk_dim(self) -> int:
        return self.spec.widths["trunk"][0]

    def trunk_features(self, x) -> np.ndarray:
        x = _trunk_points(x, self.trunk_dim)
        return _subnet_np(self.spec, self.params.parts(), "trunk", x)

    def evaluate(self, inputs: Sequence[np.ndarray], x) -> np.ndarray:
        """Batched evaluation: ``inputs`` holds one ``(B, n)`` array per branch."""
        parts = self.params.parts()
        branches = [b for b in self.spec.subnets() if b != "trunk"]
        if len(inputs) != len(branches):
            raise ShapeError(f"expected {len(branches)} input functions")
        feats = None
        for b, v in zip(branches, inputs):
            v = np.atleast_2d(np.asarray(v, dtype=np.float64))
            if v.shape[-1] != self.n_sensors:
                raise ShapeError(f"input function has {v.shape[-1]} values, grid has {self.n_sensors}")
            f = _subnet_np(self.spec, parts, b, v)
            feats = f if feats is None else feats * f
        out = feats @ self.trunk_features(x).T
        if self.spec.output_bias:
            out = out + parts["bias"]
        return out


def _trunk_points(x, trunk_dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if trunk_dim == 1 and x.ndim <= 1:
        return x.reshape(-1, 1)
    x = np.atleast_2d(x)
    if x.shape[-1] != trunk_dim:
        raise ShapeError(f"trunk expects {trunk_dim}-dimensional coordinates")
    return x


def deeponet_forward(model: OperatorModel, v, x) -> float:
    """``sum_k branch_k(v) * trunk_k(x) + bias`` for one input function."""
    if model.spec.kind != "deeponet":
        raise InvalidInput("deeponet_forward needs a vanilla deeponet")
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (model.n_sensors,):
        raise ShapeError(f"input function must have {model.n_sensors} sensor values")
    return float(model.evaluate([v[None, :]], np.atleast_1d(x) if model.trunk_dim > 1 else [x])[0, 0])


def mio_deeponet_forward(model: OperatorModel, k, f, x) -> float:
    """``sum_k branch1_k(k) * branch2_k(f) * trunk_k(x) + bias``."""
    if model.spec.kind != "mio-deeponet":
        raise InvalidInput("mio_deeponet_forward needs a multi-input deeponet")
    k = np.asarray(k, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if k.shape != (model.n_sensors,) or f.shape != (model.n_sensors,):
        raise ShapeError(f"input functions must have {model.n_sensors} sensor values")
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return float(model.evaluate([k[None, :], f[None, :]], x)[0, 0])


def operator_tape(tape: Tape, model: OperatorModel, inputs: Sequence[Jet], trunk_feats: np.ndarray) -> Jet:
    """Record ``G(inputs)`` at fixed trunk features; model weights are constants.

    Each input is a ``(1, n)`` plain node; returns a ``(1, N)`` node.
    """
    parts = model.params.parts()
    branches = [b for b in model.spec.subnets() if b != "trunk"]
    feats = None
    for b, v in zip(branches, inputs):
        f = subnet_tape(tape, model.spec, parts, b, v)
        feats = f if feats is None else tape.mul(feats, f)
    out = tape.matmul(feats, trunk_feats.T)
    if model.spec.output_bias:
        out = tape.add(out, parts["bias"])
    return out


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam step; returns ``(new_params, new_state)``."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != np.shape(params):
        raise ShapeError("gradient and parameter shapes differ")
    if not np.all(np.isfinite(grad)):
        raise NumericOverflow("non-finite gradient in Adam step")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    new = params - lr * mhat / (np.sqrt(vhat) + eps)
    return new, AdamState(m, v, t)


@dataclass
class OperatorDataset:
    """Input functions on the sensor grid and solution values at trunk points."""

    grid: np.ndarray
    inputs: tuple
    points: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = tuple(np.asarray(a, dtype=np.float64) for a in self.inputs)
        self.points = np.asarray(self.points, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        n = len(self.targets)
        if any(len(a) != n for a in self.inputs):
            raise ShapeError("inputs and targets disagree on the number of samples")

    def __len__(self) -> int:
        return len(self.targets)


def _operator_loss_grad(spec: NetworkSpec, layout: ParamLayout, flat: np.ndarray,
                        inputs: Sequence[np.ndarray], pts: np.ndarray, targets: np.ndarray):
    tape = Tape()
    nodes = param_nodes(tape, layout, flat)
    branches = [b for b in spec.subnets() if b != "trunk"]
    feats = None
    for b, v in zip(branches, inputs):
        f = subnet_tape(tape, spec, nodes, b, tape.variable(v))
        feats = f if feats is None else tape.mul(feats, f)
    tf = subnet_tape(tape, spec, nodes, "trunk", tape.variable(pts))
    out = tape.matmul(feats, tape.transpose(tf))
    if spec.output_bias:
        out = tape.add(out, nodes["bias"])
    resid = tape.add(out, -targets)
    loss = tape.scale(tape.sum(tape.square(resid)), 1.0 / targets.size)
    leaves = [nodes[n] for n in layout.names]
    grads = tape.gradient(loss, leaves)
    return float(loss.v), np.concatenate([g.ravel() for g in grads])


def relative_l2_rows(pred: np.ndarray, ref: np.ndarray) -> np.ndarray:
    num = np.linalg.norm(pred - ref, axis=-1)
    den = np.linalg.norm(ref, axis=-1)
    return num / np.where(den > 0, den, 1.0)


def train_operator(spec: NetworkSpec, train: OperatorDataset, test: OperatorDataset | None = None,
                   iterations: int = 20000, batch: int = 64, lr: float = 1e-3, seed: int = 0,
                   points_per_batch: int | None = None, lr_decay: float = 1.0,
                   log_every: int = 1000) -> OperatorModel:
    """Minimise the mean squared error of an operator network with Adam.

    Each iteration draws ``batch`` functions and, if ``points_per_batch`` is
    set, a random subset of trunk points shared by the batch.  ``lr_decay`` is
    the factor applied to the learning rate over the whole run (exponential).
    """
    if len(train) == 0:
        raise InvalidInput("training set is empty")
    rng = np.random.default_rng(seed)
    params = init_params(spec, seed)
    layout = params.layout
    flat = params.values.copy()
    state = AdamState.zeros(layout.size)
    n_pts = train.points.shape[0]
    pts_all = _trunk_points(train.points, spec.widths["trunk"][0])
    history = []
    batch = min(batch, len(train))
    gamma = lr_decay ** (1.0 / max(iterations, 1))
    for it in range(iterations):
        idx = rng.choice(len(train), size=batch, replace=False)
        if points_per_batch is not None and points_per_batch < n_pts:
            pidx = np.sort(rng.choice(n_pts, size=points_per_batch, replace=False))
        else:
            pidx = slice(None)
        inputs = [a[idx] for a in train.inputs]
        loss, grad = _operator_loss_grad(spec, layout, flat, inputs, pts_all[pidx], train.targets[idx][:, pidx])
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise TrainingDiverged(f"operator training diverged at iteration {it}")
        flat, state = adam_step(flat, grad, state, lr * gamma**it)
        if it % log_every == 0 or it == iterations - 1:
            history.append([it, loss])
            log.debug("operator iter %d loss %.3e", it, loss)
    model = OperatorModel(spec, ParamVector(flat, layout), train.grid,
                          {"loss_history": history, "iterations": iterations, "seed": seed, "lr": lr})
    if test is not None and len(test):
        pred = model.evaluate(test.inputs, test.points)
        model.metadata["test_rel_l2"] = float(np.mean(relative_l2_rows(pred, test.targets)))
        model.metadata["test_mse"] = float(np.mean((pred - test.targets) ** 2))
    return model


# ---------------------------------------------------------------------------
# dropout
# ---------------------------------------------------------------------------


def _dropout_masks(rng, spec: NetworkSpec, rate: float, n: int) -> list:
    widths = spec.widths["net"]
    keep = 1.0 - rate
    return [(rng.random((n, w)) < keep) / keep for w in widths[1:-1]]


def train_dropout_mlp(spec: NetworkSpec, x: np.ndarray, y: np.ndarray, rate: float, iterations: int,
                      lr: float = 1e-3, seed: int = 0, weight_decay: float = 0.0) -> ParamVector:
    """Fit an MLP by Adam on the squared error with inverted dropout active."""
    if not 0.0 <= rate < 1.0:
        raise InvalidInput("dropout rate must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    params = init_params(spec, seed)
    layout = params.layout
    flat = params.values.copy()
    state = AdamState.zeros(layout.size)
    x = np.asarray(x, dtype=np.float64).reshape(len(y), -1)
    y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)
    for it in range(iterations):
        tape = Tape()
        nodes = param_nodes(tape, layout, flat)
        masks = _dropout_masks(rng, spec, rate, len(x)) if rate > 0 else None
        out = subnet_tape(tape, spec, nodes, "net", tape.variable(x), masks)
        loss = tape.scale(tape.sum(tape.square(tape.add(out, -y))), 1.0 / len(y))
        leaves = [nodes[n] for n in layout.names]
        grad = np.concatenate([g.ravel() for g in tape.gradient(loss, leaves)])
        grad = grad + 2.0 * weight_decay * flat
        if not np.isfinite(loss.v):
            raise TrainingDiverged(f"dropout training diverged at iteration {it}")
        flat, state = adam_step(flat, grad, state, lr)
    return ParamVector(flat, layout)


def dropout_predict(spec: NetworkSpec, params, x, rate: float, M: int, seed: int,
                    chunk: int = 100) -> np.ndarray:
    """``M`` stochastic forward passes with independent inverted-dropout masks.

    Returns an array of shape ``(M, N, out)`` for ``x`` of shape ``(N, in)``.
    """
    if not 0.0 <= rate < 1.0:
        raise InvalidInput("dropout rate must lie in [0, 1)")
    parts = _as_parts(spec, params)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, spec.widths["net"][0])
    if rate == 0.0:
        y = _subnet_np(spec, parts, "net", x)
        return np.broadcast_to(y, (M, *y.shape)).copy()
    rng = np.random.default_rng(seed)
    out = []
    keep = 1.0 - rate
    widths = spec.widths["net"]
    done = 0
    while done < M:
        m = min(chunk, M - done)
        masks = [(rng.random((m, 1, w)) < keep) / keep for w in widths[1:-1]]
        out.append(_subnet_np(spec, parts, "net", x[None, :, :], masks))
        done += m
    return np.concatenate(out, axis=0)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: OperatorModel, path) -> Path:
    """Write a JSON checkpoint; floats use shortest round-trip decimal repr."""
    doc = {
        "format": "noisyio-operator/1",
        "spec": model.spec.to_dict(),
        "layout": model.params.layout.to_list(),
        "params": [float(v) for v in model.params.values],
        "grid": [float(g) for g in model.grid],
        "metadata": model.metadata,
    }
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path) -> OperatorModel:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    spec = NetworkSpec.from_dict(doc["spec"])
    layout = ParamLayout.from_list(doc["layout"])
    if layout != spec.layout():
        raise ShapeError("checkpoint layout does not match its network spec")
    params = ParamVector(np.array(doc["params"], dtype=np.float64), layout)
    return OperatorModel(spec, params, np.array(doc["grid"], dtype=np.float64), doc.get("metadata", {}))
