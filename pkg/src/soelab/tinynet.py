"""A small tanh MLP with hand-written backprop, Adam/SGD, and a checksummed checkpoint format.

Outputs are squashed into box bounds: ``y = center + halfwidth * tanh(z)``.
The training loss is the mean squared error of squashed outputs, each
component divided by its half-width first so that steering (half-width
0.6 rad) and acceleration (half-width 4 m/s^2) carry comparable weight.
Pass ``loss_scale=None`` for the unscaled error.

Checkpoint layout (little-endian)::

    8s   magic  b"SOENET\\0\\1"
    u16  format version
    u32  n   then n bytes of JSON architecture descriptor
    u64  seed
    u32  epoch
    f64  train_loss
    f64  created_at (seconds since epoch; the runner stores 0 for reproducibility)
    u64  P   then P float64 parameters (per layer: W row-major (fan_in, fan_out), then b)
    32s  sha256 of everything above
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from soelab import rng as rngmod

MAGIC = b"SOENET\x00\x01"
FORMAT_VERSION = 1
DEFAULT_LOW = (-5.0, -0.6)
DEFAULT_HIGH = (3.0, 0.6)


class NonFiniteLossError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointDigestError(CheckpointError):
    pass


class Network:
    """Parameters live in one flat float64 vector; per-layer ``W``/``b`` are views into it."""

    def __init__(self, layer_dims, low=DEFAULT_LOW, high=DEFAULT_HIGH, params: np.ndarray | None = None):
        dims = tuple(int(d) for d in layer_dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"invalid layer dims {layer_dims}")
        self.dims = dims
        self.low = np.array(low, dtype=np.float64)
        self.high = np.array(high, dtype=np.float64)
        if self.low.shape != (dims[-1],) or self.high.shape != (dims[-1],) or np.any(self.high <= self.low):
            raise ValueError("output bounds must match the output width and satisfy low < high")
        self.center = 0.5 * (self.low + self.high)
        self.halfwidth = 0.5 * (self.high - self.low)
        n = param_count(dims)
        if params is None:
            params = np.zeros(n)
        params = np.ascontiguousarray(params, dtype=np.float64)
        if params.shape != (n,):
            raise ValueError(f"expected {n} parameters, got shape {params.shape}")
        if not np.all(np.isfinite(params)):
            raise ValueError("parameters must be finite")
        self.params = params
        self.W: list[np.ndarray] = []
        self.b: list[np.ndarray] = []
        off = 0
        for fi, fo in zip(dims[:-1], dims[1:]):
            self.W.append(params[off:off + fi * fo].reshape(fi, fo))
            off += fi * fo
            self.b.append(params[off:off + fo])
            off += fo

    def __getstate__(self):
        return {"dims": self.dims, "low": self.low, "high": self.high, "params": self.params}

    def __setstate__(self, state):
        self.__init__(state["dims"], state["low"], state["high"], state["params"])

    @property
    def n_params(self) -> int:
        return int(self.params.size)

    def arch(self) -> dict:
        return {"layer_dims": list(self.dims), "hidden": "tanh", "output": "tanh_squash",
                "low": [float(x) for x in self.low], "high": [float(x) for x in self.high]}

    @property
    def arch_hash(self) -> str:
        return arch_hash(self.arch())

    def copy(self) -> "Network":
        return Network(self.dims, self.low, self.high, self.params.copy())

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)


def param_count(dims) -> int:
    return int(sum(fi * fo + fo for fi, fo in zip(dims[:-1], dims[1:])))


def arch_hash(arch: dict) -> str:
    return hashlib.sha256(json.dumps(arch, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def init(layer_dims, seed: int, low=DEFAULT_LOW, high=DEFAULT_HIGH) -> Network:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases."""
    net = Network(layer_dims, low, high)
    gen = rngmod.stream("init", int(seed))
    for W in net.W:
        fi, fo = W.shape
        r = math.sqrt(6.0 / (fi + fo))
        W[...] = gen.uniform(-r, r, size=W.shape)
    return net


def _check_input(net: Network, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.dims[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match network input {net.dims[0]}")
    return x


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Squashed outputs for one input (F,) or a batch (N, F)."""
    x = _check_input(net, x)
    h = x
    last = len(net.W) - 1
    for i, (W, b) in enumerate(zip(net.W, net.b)):
        z = h @ W + b
        h = np.tanh(z) if i < last else z
    return net.center + net.halfwidth * np.tanh(h)


def backward(net: Network, x: np.ndarray, y: np.ndarray, loss_scale: str | None = "halfwidth"):
    """Loss and flat gradient for a batch.

    loss = mean over rows and output components of ((yhat - y) / s)^2 with
    s = the output half-width (``loss_scale="halfwidth"``) or 1.
    """
    x = _check_input(net, x)
    if x.ndim == 1:
        x = x[None]
    y = np.asarray(y, dtype=np.float64).reshape(x.shape[0], net.dims[-1])
    if x.shape[0] == 0:
        raise ValueError("backward needs a non-empty batch")
    scale = net.halfwidth if loss_scale == "halfwidth" else np.ones_like(net.halfwidth)
    acts = [x]
    last = len(net.W) - 1
    h = x
    for i, (W, b) in enumerate(zip(net.W, net.b)):
        z = h @ W + b
        h = np.tanh(z) if i < last else z
        acts.append(h)
    t = np.tanh(acts[-1])
    yhat = net.center + net.halfwidth * t
    r = (yhat - y) / scale
    count = r.size
    loss = float(np.sum(r * r) / count)
    if not math.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss {loss}")
    # d loss / d raw output
    delta = (2.0 / count) * r / scale * net.halfwidth * (1.0 - t * t)
    grad = np.empty_like(net.params)
    gW, gb = _views(net.dims, grad)
    for i in range(last, -1, -1):
        gW[i][...] = acts[i].T @ delta
        gb[i][...] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.W[i].T) * (1.0 - acts[i] * acts[i])
    if not np.all(np.isfinite(grad)):
        raise NonFiniteLossError("non-finite gradient")
    return loss, grad


def _views(dims, flat):
    Ws, bs, off = [], [], 0
    for fi, fo in zip(dims[:-1], dims[1:]):
        Ws.append(flat[off:off + fi * fo].reshape(fi, fo))
        off += fi * fo
        bs.append(flat[off:off + fo])
        off += fo
    return Ws, bs


def loss(net: Network, x: np.ndarray, y: np.ndarray, loss_scale: str | None = "halfwidth") -> float:
    yhat = forward(net, x)
    scale = net.halfwidth if loss_scale == "halfwidth" else 1.0
    r = (yhat - np.asarray(y, dtype=np.float64).reshape(yhat.shape)) / scale
    return float(np.mean(r * r))


# --------------------------------------------------------------------------
# optimisation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss_scale: str | None = "halfwidth"

    def __post_init__(self) -> None:
        if self.learning_rate < 0 or not math.isfinite(self.learning_rate):
            raise ValueError("learning_rate must be finite and >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class OptimizerState:
    kind: str
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def make_optimizer(config: TrainConfig, net: Network) -> OptimizerState:
    if config.optimizer == "adam":
        return OptimizerState("adam", 0, np.zeros(net.n_params), np.zeros(net.n_params))
    return OptimizerState("sgd")


def apply_update(net: Network, grad: np.ndarray, config: TrainConfig, state: OptimizerState) -> None:
    lr = config.learning_rate
    if state.kind == "sgd":
        net.params -= lr * grad
        return
    state.step += 1
    state.m *= config.beta1
    state.m += (1.0 - config.beta1) * grad
    state.v *= config.beta2
    state.v += (1.0 - config.beta2) * grad * grad
    m_hat = state.m / (1.0 - config.beta1 ** state.step)
    v_hat = state.v / (1.0 - config.beta2 ** state.step)
    net.params -= lr * m_hat / (np.sqrt(v_hat) + config.eps)


def _arrays(data):
    if isinstance(data, tuple):
        return np.asarray(data[0], dtype=np.float64), np.asarray(data[1], dtype=np.float64)
    return data.normalized_features(), data.targets


def train_epoch(net: Network, data, config: TrainConfig, epoch_index: int,
                optimizer: OptimizerState | None = None) -> float:
    """One pass over ``data`` in an order drawn from (seed, epoch_index); returns the mean batch loss.

    ``data`` is an ``(X, Y)`` pair of already-normalised arrays or a dataset
    exposing ``normalized_features()`` and ``targets``.  Updates ``net`` in
    place.  Batch losses are measured before each update and averaged with
    batch-size weights.
    """
    x, y = _arrays(data)
    n = x.shape[0]
    if n == 0:
        raise ValueError("train_epoch needs a non-empty dataset")
    if optimizer is None:
        optimizer = make_optimizer(config, net)
    order = rngmod.stream("shuffle", int(config.seed), int(epoch_index)).permutation(n)
    total = 0.0
    for start in range(0, n, config.batch_size):
        idx = order[start:start + config.batch_size]
        batch_loss, grad = backward(net, x[idx], y[idx], config.loss_scale)
        total += batch_loss * idx.size
        apply_update(net, grad, config, optimizer)
    return total / n


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------


@dataclass(eq=False)
class Checkpoint:
    network: Network
    seed: int
    epoch: int
    train_loss: float
    created_at: float = 0.0
    arch_hash: str = field(init=False)

    def __post_init__(self) -> None:
        self.arch_hash = self.network.arch_hash

    def to_bytes(self) -> bytes:
        arch = json.dumps(self.network.arch(), sort_keys=True, separators=(",", ":")).encode()
        body = b"".join([
            MAGIC,
            struct.pack("<HI", FORMAT_VERSION, len(arch)), arch,
            struct.pack("<QIdd", int(self.seed) & 0xFFFFFFFFFFFFFFFF, int(self.epoch), float(self.train_loss),
                        float(self.created_at)),
            struct.pack("<Q", self.network.n_params),
            self.network.params.astype("<f8").tobytes(),
        ])
        return body + hashlib.sha256(body).digest()

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        if len(raw) < len(MAGIC) + 32 or not raw.startswith(MAGIC):
            raise CheckpointError("not a network checkpoint (bad magic)")
        body, trailer = raw[:-32], raw[-32:]
        off = len(MAGIC)
        (version,) = struct.unpack_from("<H", body, off)
        if version != FORMAT_VERSION:
            raise CheckpointVersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
        if hashlib.sha256(body).digest() != trailer:
            raise CheckpointDigestError("checkpoint digest mismatch (file corrupted)")
        (alen,) = struct.unpack_from("<I", body, off + 2)
        off += 6
        arch = json.loads(body[off:off + alen])
        off += alen
        seed, epoch, train_loss, created_at = struct.unpack_from("<QIdd", body, off)
        off += struct.calcsize("<QIdd")
        (n,) = struct.unpack_from("<Q", body, off)
        off += 8
        params = np.frombuffer(body, dtype="<f8", count=n, offset=off).astype(np.float64)
        net = Network(arch["layer_dims"], arch["low"], arch["high"], params)
        return cls(net, seed, epoch, train_loss, created_at)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
