"""Dense feed-forward networks in float64 numpy.

Layers compute ``act(W @ x + b)`` with ``W`` stored as ``(out, in)``.
Batches are passed as ``(n, in)`` arrays and processed row-wise.

The loss is the mean squared error over all output components (and over
the rows of a batch), so a batch gradient is the average of per-sample
gradients. ReLU has derivative 0 at exactly 0.
"""

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .rng import MASK64, Rng
from .scaling import Scaler

FORMAT_VERSION = 1
ACTIVATIONS = ("relu", "linear")
OPTIMIZERS = ("adam", "sgd")

# xor-ed into the config seed for the mini-batch shuffling stream, keeping it
# independent of the weight-initialization stream
TRAIN_STREAM = 0xD1B54A32D192ED03


class ModelFormatError(ValueError):
    """A model file is unreadable, of the wrong version, or inconsistent."""


class NonFiniteLossError(ArithmeticError):
    """Training produced a NaN or infinite loss."""


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    output_dim: int
    hidden_layers: int = 4
    hidden_neurons: int = 14
    hidden_activation: str = "relu"
    output_activation: str = "linear"
    learning_rate: float = 0.001
    epochs: int = 32
    batch_size: int = 20
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        for name in ("input_dim", "output_dim", "hidden_layers", "hidden_neurons", "epochs", "batch_size"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {v!r}")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 <= self.seed <= MASK64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        for name in ("hidden_activation", "output_activation"):
            if getattr(self, name) not in ACTIVATIONS:
                raise ValueError(f"{name} must be one of {ACTIVATIONS}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")

    def replace(self, **changes) -> "NetworkConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    activation: str

    @property
    def shape(self):
        return self.weights.shape


@dataclass
class Network:
    layers: list
    # bumped on every parameter update so stale forward caches are detected
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.weights.ndim != 2 or layer.biases.shape != (layer.weights.shape[0],):
                raise ValueError(f"layer {i}: weights {layer.weights.shape} do not match biases {layer.biases.shape}")
            if i and layer.weights.shape[1] != self.layers[i - 1].weights.shape[0]:
                raise ValueError(
                    f"layer {i} expects {layer.weights.shape[1]} inputs, previous layer gives "
                    f"{self.layers[i - 1].weights.shape[0]}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    @property
    def shapes(self):
        return [layer.weights.shape for layer in self.layers]

    def parameters(self):
        """Flat list ``[W0, b0, W1, b1, ...]`` of the live arrays."""
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.biases]
        return out

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "Network":
        return Network([Layer(l.weights.copy(), l.biases.copy(), l.activation) for l in self.layers])


def init_network(cfg: NetworkConfig) -> Network:
    """Glorot-uniform weights, zero biases.

    Weights are filled layer by layer in row-major order with
    ``(2u - 1) * sqrt(6 / (fan_in + fan_out))`` where ``u`` comes from
    ``Rng(cfg.seed).uniform()``.
    """
    rng = Rng(cfg.seed)
    dims = [cfg.input_dim] + [cfg.hidden_neurons] * cfg.hidden_layers + [cfg.output_dim]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        w = np.array([(2.0 * rng.uniform() - 1.0) * limit for _ in range(fan_in * fan_out)]).reshape(fan_out, fan_in)
        act = cfg.output_activation if i == len(dims) - 2 else cfg.hidden_activation
        layers.append(Layer(w, np.zeros(fan_out), act))
    return Network(layers)


@dataclass
class ForwardCache:
    net: Network
    version: int
    single: bool
    inputs: list  # input to each layer, (n, in)
    pre: list  # pre-activations, (n, out)
    output: np.ndarray


def _activate(z, act):
    return np.maximum(z, 0.0) if act == "relu" else z


def forward(net: Network, x):
    """Run ``x`` (a vector or an ``(n, in)`` batch). Returns ``(y, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = x.reshape(1, -1) if single else x
    if a.ndim != 2 or a.shape[1] != net.input_dim:
        raise ValueError(f"expected input of width {net.input_dim}, got shape {x.shape}")
    inputs, pre = [], []
    for layer in net.layers:
        inputs.append(a)
        z = a @ layer.weights.T + layer.biases
        pre.append(z)
        a = _activate(z, layer.activation)
    y = a[0] if single else a
    return y, ForwardCache(net, net.version, single, inputs, pre, a)


def predict(net: Network, x):
    return forward(net, x)[0]


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    if pred.size == 0:
        raise ValueError("empty prediction")
    d = pred - target
    return float(np.mean(d * d))


def backward(net: Network, cache: ForwardCache, target):
    """Gradients of :func:`mse_loss` as a list of ``(dW, db)`` per layer."""
    if cache.net is not net or cache.version != net.version:
        raise ValueError("forward cache does not belong to this network state")
    t = np.asarray(target, dtype=np.float64)
    t = t.reshape(1, -1) if cache.single else t
    y = cache.output
    if t.shape != y.shape:
        raise ValueError(f"target shape {t.shape} does not match output {y.shape}")
    delta = 2.0 * (y - t) / y.size
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if layer.activation == "relu":
            delta = delta * (cache.pre[i] > 0.0)
        grads[i] = (delta.T @ cache.inputs[i], delta.sum(axis=0))
        if i:
            delta = delta @ layer.weights
    return grads


@dataclass
class OptimizerState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_optimizer(net: Network, beta1=0.9, beta2=0.999, eps=1e-8) -> OptimizerState:
    params = net.parameters()
    return OptimizerState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0, beta1, beta2, eps)


def _flat_grads(grads):
    out = []
    for gw, gb in grads:
        out += [gw, gb]
    return out


def optimizer_step(state: OptimizerState, net: Network, grads, lr: float) -> None:
    """One bias-corrected Adam update, in place."""
    params = net.parameters()
    flat = _flat_grads(grads)
    if len(flat) != len(params) or len(state.m) != len(params):
        raise ValueError("gradient/optimizer state does not match the network layout")
    for p, g, m in zip(params, flat, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: parameter {p.shape}, gradient {g.shape}, moment {m.shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, flat, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    net.version += 1


def sgd_step(net: Network, grads, lr: float) -> None:
    params = net.parameters()
    flat = _flat_grads(grads)
    if len(flat) != len(params) or any(p.shape != g.shape for p, g in zip(params, flat)):
        raise ValueError("gradients do not match the network layout")
    for p, g in zip(params, flat):
        p -= lr * g
    net.version += 1


@dataclass
class LossCurve:
    training_loss: list
    validation_loss: list

    def __len__(self):
        return len(self.training_loss)


def train(net: Network, inputs, targets, cfg: NetworkConfig, val_fraction: float = 0.2) -> LossCurve:
    """Mini-batch training on standardized arrays; mutates ``net``.

    One ``Rng(cfg.seed ^ TRAIN_STREAM)`` stream first draws the train /
    validation permutation, then reshuffles the training indices at the start
    of every epoch. The last short batch of an epoch is kept.
    """
    X = np.asarray(inputs, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError(f"inputs {X.shape} and targets {Y.shape} must be (n, d) arrays of equal length")
    if X.shape[1] != net.input_dim or Y.shape[1] != net.output_dim:
        raise ValueError(
            f"data is {X.shape[1]}->{Y.shape[1]} but network is {net.input_dim}->{net.output_dim}"
        )
    n = X.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    n_val = min(max(int(math.floor(val_fraction * n + 0.5)), 1), n - 1)
    rng = Rng(cfg.seed ^ TRAIN_STREAM)
    perm = rng.permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    Xv, Yv = X[val_idx], Y[val_idx]
    Xt, Yt = X[train_idx], Y[train_idx]

    state = init_optimizer(net)
    bs = cfg.batch_size
    curve = LossCurve([], [])
    order = list(range(len(train_idx)))
    for epoch in range(cfg.epochs):
        rng.shuffle(order)
        for start in range(0, len(order), bs):
            rows = order[start:start + bs]
            _, cache = forward(net, Xt[rows])
            grads = backward(net, cache, Yt[rows])
            if cfg.optimizer == "adam":
                optimizer_step(state, net, grads, cfg.learning_rate)
            else:
                sgd_step(net, grads, cfg.learning_rate)
        tl = mse_loss(predict(net, Xt), Yt)
        vl = mse_loss(predict(net, Xv), Yv)
        if not (math.isfinite(tl) and math.isfinite(vl)):
            raise NonFiniteLossError(f"non-finite loss at epoch {epoch + 1}: train={tl}, validation={vl}")
        curve.training_loss.append(tl)
        curve.validation_loss.append(vl)
    return curve


def _sample_loss(net, x, t):
    return mse_loss(predict(net, x), t)


def grad_check(net: Network, sample, eps: float = 1e-6) -> float:
    """Largest relative gap between :func:`backward` and central differences.

    ``sample`` is an ``(x, target)`` pair. The relative error of a parameter
    is ``|a - b| / max(|a|, |b|, 1e-12)``. Results are meaningless when a
    ReLU pre-activation sits within the perturbation of its kink; see
    :func:`kink_margin`.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x, t = sample
    _, cache = forward(net, x)
    analytic = _flat_grads(backward(net, cache, t))
    worst = 0.0
    for p, g in zip(net.parameters(), analytic):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = _sample_loss(net, x, t)
            flat[k] = orig - eps
            down = _sample_loss(net, x, t)
            flat[k] = orig
            num = (up - down) / (2.0 * eps)
            a = gflat[k]
            rel = abs(a - num) / max(abs(a), abs(num), 1e-12)
            worst = max(worst, rel)
    return worst


def kink_margin(net: Network, x) -> float:
    """Smallest ``|pre-activation|`` over ReLU units for input ``x``."""
    _, cache = forward(net, x)
    margins = [np.abs(z).min() for z, layer in zip(cache.pre, net.layers) if layer.activation == "relu"]
    return float(min(margins)) if margins else math.inf


# -- serialization ---------------------------------------------------------

def network_to_dict(net: Network) -> list:
    return [
        {
            "rows": int(l.weights.shape[0]),
            "cols": int(l.weights.shape[1]),
            "weights": [float(v) for v in l.weights.reshape(-1)],
            "biases": [float(v) for v in l.biases],
            "activation": l.activation,
        }
        for l in net.layers
    ]


def network_from_dict(layers: list) -> Network:
    out = []
    for i, d in enumerate(layers):
        try:
            rows, cols = int(d["rows"]), int(d["cols"])
            weights, biases, act = d["weights"], d["biases"], d["activation"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"layer {i}: malformed entry ({exc})") from None
        if rows < 1 or cols < 1 or len(weights) != rows * cols:
            raise ModelFormatError(f"layer {i}: declared {rows}x{cols} but has {len(weights)} weights")
        if len(biases) != rows:
            raise ModelFormatError(f"layer {i}: declared {rows} rows but has {len(biases)} biases")
        if act not in ACTIVATIONS:
            raise ModelFormatError(f"layer {i}: unknown activation {act!r}")
        w = np.array(weights, dtype=np.float64).reshape(rows, cols)
        b = np.array(biases, dtype=np.float64)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ModelFormatError(f"layer {i}: non-finite parameters")
        out.append(Layer(w, b, act))
    try:
        return Network(out)
    except ValueError as exc:
        raise ModelFormatError(f"inconsistent layer shapes: {exc}") from None


def dumps_model(net: Network, scalers: dict, meta: dict) -> str:
    """Serialize to the versioned JSON document.

    ``scalers`` maps ``"input"``/``"output"`` to :class:`Scaler`; ``meta``
    holds ``task``, ``config`` (a :class:`NetworkConfig`) and optionally
    ``provenance`` (a JSON-able dict).
    """
    doc = {
        "format_version": FORMAT_VERSION,
        "task": meta["task"],
        "config": meta["config"].to_dict(),
        "scalers": {k: scalers[k].to_dict() for k in ("input", "output")},
        "layers": network_to_dict(net),
        "provenance": meta.get("provenance", {}),
    }
    return json.dumps(doc, indent=1, allow_nan=False) + "\n"


def loads_model(text: str, source: str = "<string>"):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{source}: not a complete JSON document ({exc})") from None
    if not isinstance(doc, dict):
        raise ModelFormatError(f"{source}: expected a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{source}: unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    missing = [k for k in ("task", "config", "scalers", "layers") if k not in doc]
    if missing:
        raise ModelFormatError(f"{source}: missing field(s) {', '.join(missing)}")
    if doc["task"] not in ("predict", "design"):
        raise ModelFormatError(f"{source}: unknown task {doc['task']!r}")
    net = network_from_dict(doc["layers"])
    try:
        cfg = NetworkConfig.from_dict(doc["config"])
        scalers = {k: Scaler.from_dict(doc["scalers"][k]) for k in ("input", "output")}
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{source}: bad config or scalers ({exc})") from None
    if (cfg.input_dim, cfg.output_dim) != (net.input_dim, net.output_dim):
        raise ModelFormatError(
            f"{source}: config says {cfg.input_dim}->{cfg.output_dim}, layers give {net.input_dim}->{net.output_dim}"
        )
    if len(net.layers) != cfg.hidden_layers + 1:
        raise ModelFormatError(f"{source}: config says {cfg.hidden_layers} hidden layers, file has {len(net.layers) - 1}")
    if scalers["input"].dim != net.input_dim or scalers["output"].dim != net.output_dim:
        raise ModelFormatError(f"{source}: scaler sizes do not match network dimensions")
    meta = {"task": doc["task"], "config": cfg, "provenance": doc.get("provenance", {})}
    return net, scalers, meta


def save_model(net: Network, scalers: dict, meta: dict, path) -> None:
    Path(path).write_text(dumps_model(net, scalers, meta), encoding="utf-8")


def load_model(path):
    path = Path(path)
    return loads_model(path.read_text(encoding="utf-8"), source=str(path))
