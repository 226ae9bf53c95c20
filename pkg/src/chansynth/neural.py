"""A small dense network stack with explicit layer-local backward rules.

Every layer caches what it needs during ``forward`` and consumes it in
``backward``; a :class:`Sequential` replays its layers in reverse.  Parameter
gradients are written to ``layer.grads`` keyed like ``layer.params``.
Everything runs in float64.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, MagicError, ShapeError, TruncatedError, VersionError

LEAKY_SLOPE = 0.01
BN_MOMENTUM = 0.1
BN_EPS = 1e-5


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def _cached(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called before forward")
        cache, self._cache = self._cache, None
        return cache

    def spec(self) -> dict:
        return {"type": self.kind}


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        super().__init__()
        if n_in < 1 or n_out < 1:
            raise ValueError(f"dense layer sizes must be positive, got {n_in}x{n_out}")
        limit = np.sqrt(6.0 / (n_in + n_out))
        if rng is None:
            weights = np.zeros((n_out, n_in))
        else:
            weights = rng.uniform(-limit, limit, size=(n_out, n_in))
        self.params = {"weight": weights, "bias": np.zeros(n_out)}

    @property
    def n_in(self):
        return self.params["weight"].shape[1]

    @property
    def n_out(self):
        return self.params["weight"].shape[0]

    def forward(self, x, train=True):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"dense layer expects width {self.n_in}, got {x.shape[-1]}")
        self._cache = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, grad):
        x = self._cached()
        self.grads = {"weight": grad.T @ x, "bias": grad.sum(axis=0)}
        return grad @ self.params["weight"]

    def spec(self):
        return {"type": self.kind, "n_in": self.n_in, "n_out": self.n_out}


def leaky_relu(x, slope=LEAKY_SLOPE):
    return np.maximum(x, slope * x)


class LeakyReLU(Layer):
    kind = "leaky_relu"

    def __init__(self, slope: float = LEAKY_SLOPE):
        super().__init__()
        if not 0 < slope < 1:
            raise ValueError("slope must lie in (0, 1)")
        self.slope = slope

    def forward(self, x, train=True):
        self._cache = x > 0
        return leaky_relu(x, self.slope)

    def backward(self, grad):
        pos = self._cached()
        return np.where(pos, grad, self.slope * grad)

    def spec(self):
        return {"type": self.kind, "slope": self.slope}


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, width: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        super().__init__()
        if not 0 < momentum < 1 or eps <= 0:
            raise ValueError("momentum must lie in (0, 1) and eps be positive")
        self.momentum = momentum
        self.eps = eps
        self.params = {"scale": np.ones(width), "shift": np.zeros(width)}
        self.buffers = {"running_mean": np.zeros(width), "running_var": np.ones(width)}

    def forward(self, x, train=True):
        if not train:
            xhat = (x - self.buffers["running_mean"]) / np.sqrt(self.buffers["running_var"] + self.eps)
            return self.params["scale"] * xhat + self.params["shift"]
        n = x.shape[0]
        if n < 2:
            raise ValueError("batch normalization in train mode needs at least 2 rows")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        m = self.momentum
        self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mean
        self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * var * n / (n - 1)
        self._cache = (xhat, inv_std)
        return self.params["scale"] * xhat + self.params["shift"]

    def backward(self, grad):
        xhat, inv_std = self._cached()
        self.grads = {"scale": np.sum(grad * xhat, axis=0), "shift": grad.sum(axis=0)}
        g = grad * self.params["scale"]
        return inv_std * (g - g.mean(axis=0) - xhat * np.mean(g * xhat, axis=0))

    def spec(self):
        return {"type": self.kind, "width": self.params["scale"].size,
                "momentum": self.momentum, "eps": self.eps}


class Sequential:
    """Ordered layer stack; the tape is the layer list itself."""

    def __init__(self, layers):
        self.layers = list(layers)
        self._ran = False

    def forward(self, x, train=True):
        for layer in self.layers:
            x = layer.forward(x, train)
        self._ran = train
        return x

    __call__ = forward

    def backward(self, grad):
        if not self._ran:
            raise RuntimeError("backward called before a train-mode forward pass")
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        self._ran = False
        return grad

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for key, value in layer.params.items():
                yield f"{i}.{key}", layer, key

    def params(self) -> dict[str, np.ndarray]:
        return {name: layer.params[key] for name, layer, key in self.named_params()}

    def grads(self) -> dict[str, np.ndarray]:
        return {name: layer.grads[key] for name, layer, key in self.named_params()}

    def tensors(self):
        """Parameters and buffers in a fixed order, for checkpointing."""
        for i, layer in enumerate(self.layers):
            for key, value in layer.params.items():
                yield f"{i}.{key}", layer.params, key
            for key, value in layer.buffers.items():
                yield f"{i}.{key}", layer.buffers, key

    def spec(self) -> list[dict]:
        return [layer.spec() for layer in self.layers]


def mlp(widths, rng, final_activation=False) -> Sequential:
    """Dense -> BatchNorm -> LeakyReLU blocks over ``widths``; the last Dense stays linear."""
    layers = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        layers.append(Dense(a, b, rng))
        if i < len(widths) - 2 or final_activation:
            layers += [BatchNorm(b), LeakyReLU()]
    return Sequential(layers)


def _spec_size(spec: dict) -> int:
    """Parameter and buffer count a layer spec asks for, checked for sane sizes."""
    kind = spec.get("type")
    if kind == "dense":
        n_in, n_out = int(spec["n_in"]), int(spec["n_out"])
        if n_in < 1 or n_out < 1:
            raise ValueError("dense sizes must be positive")
        return n_in * n_out + n_out
    if kind == "batchnorm":
        width = int(spec["width"])
        if width < 1:
            raise ValueError("batchnorm width must be positive")
        return 4 * width
    return 0


def layer_from_spec(spec: dict) -> Layer:
    kind = spec.get("type")
    if kind == "dense":
        return Dense(int(spec["n_in"]), int(spec["n_out"]))
    if kind == "batchnorm":
        return BatchNorm(int(spec["width"]), spec["momentum"], spec["eps"])
    if kind == "leaky_relu":
        return LeakyReLU(spec["slope"])
    raise FormatError(f"unknown layer type {kind!r}")


def reparameterize(mu, logvar, noise):
    mu, logvar, noise = map(np.asarray, (mu, logvar, noise))
    if not mu.shape == logvar.shape == noise.shape:
        raise ValueError("mu, logvar and noise must share a shape")
    return mu + np.exp(0.5 * logvar) * noise


class Adam:
    """Bias-corrected Adam; updates parameter arrays in place."""

    def __init__(self, params: dict[str, np.ndarray], learning_rate=1e-3,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(name)
        self.step_count += 1
        t, b1, b2 = self.step_count, self.beta1, self.beta2
        step_size = self.learning_rate / (1 - b1 ** t)
        v_corr = 1.0 / np.sqrt(1 - b2 ** t)
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * np.square(g)
            # m_hat / (sqrt(v_hat) + eps), folded to avoid temporaries
            denom = np.sqrt(v)
            denom *= v_corr
            denom += self.eps
            np.divide(m, denom, out=denom)
            denom *= step_size
            params[name] -= denom


# Checkpoint layout (all little-endian):
#   b"CKPT" | u16 version | u32 manifest length | manifest (UTF-8 JSON) | f64 payload
# The manifest lists every network's layer specs and, in payload order, each
# tensor's network, name and shape.  Any caller metadata sits under "meta".
_CKPT_MAGIC = b"CKPT"
_CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHI")


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def encode_checkpoint(networks: dict[str, Sequential], meta: dict) -> bytes:
    tensors, chunks = [], []
    for net_name in sorted(networks):
        for name, store, key in networks[net_name].tensors():
            arr = np.ascontiguousarray(store[key], dtype="<f8")
            tensors.append({"net": net_name, "name": name, "shape": list(arr.shape)})
            chunks.append(arr.tobytes())
    manifest = _dumps({
        "layers": {k: networks[k].spec() for k in sorted(networks)},
        "tensors": tensors,
        "meta": meta,
    })
    return _CKPT_HEADER.pack(_CKPT_MAGIC, _CKPT_VERSION, len(manifest)) + manifest + b"".join(chunks)


def decode_checkpoint(raw: bytes) -> tuple[dict[str, Sequential], dict]:
    if len(raw) < _CKPT_HEADER.size:
        raise TruncatedError("checkpoint header truncated")
    magic, version, mlen = _CKPT_HEADER.unpack_from(raw)
    if magic != _CKPT_MAGIC:
        raise MagicError(f"bad magic {magic!r}, expected {_CKPT_MAGIC!r}")
    if version != _CKPT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    start = _CKPT_HEADER.size
    if len(raw) < start + mlen:
        raise TruncatedError("checkpoint manifest truncated")
    try:
        manifest = json.loads(raw[start:start + mlen])
        layer_specs = manifest["layers"]
        entries = [(str(e["net"]), str(e["name"]), tuple(int(d) for d in e["shape"]))
                   for e in manifest["tensors"]]
        meta = manifest.get("meta", {})
        if not isinstance(layer_specs, dict) or not isinstance(meta, dict):
            raise TypeError("layers and meta must be objects")
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise FormatError(f"unreadable checkpoint manifest: {exc}") from None
    offset = start + mlen
    if any(d < 0 for _, _, shape in entries for d in shape):
        raise ShapeError("negative tensor dimension in checkpoint manifest")
    available = (len(raw) - offset) // 8
    declared = sum(int(np.prod(shape, dtype=np.int64)) for _, _, shape in entries)
    if declared > available:
        raise TruncatedError("checkpoint payload truncated")
    try:
        if sum(_spec_size(sp) for specs in layer_specs.values() for sp in specs) > declared:
            raise ShapeError("layer manifest declares more parameters than the payload holds")
        networks = {k: Sequential([layer_from_spec(sp) for sp in specs]) for k, specs in layer_specs.items()}
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise ShapeError(f"invalid layer manifest: {exc!r}") from None
    slots = {(k, name): (store, key) for k, net in networks.items() for name, store, key in net.tensors()}
    for net_name, name, shape in entries:
        slot = slots.pop((net_name, name), None)
        if slot is None:
            raise ShapeError(f"tensor {net_name}/{name} not in layer manifest")
        store, key = slot
        if shape != store[key].shape:
            raise ShapeError(f"tensor {net_name}/{name} has shape {shape}, layer expects {store[key].shape}")
        count = int(np.prod(shape, dtype=np.int64))
        store[key] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(float).reshape(shape)
        offset += 8 * count
    if slots:
        raise ShapeError(f"checkpoint missing tensors: {sorted(slots)}")
    if offset != len(raw):
        raise TruncatedError(f"{len(raw) - offset} trailing bytes after checkpoint payload")
    return networks, meta


def save_checkpoint(path, networks: dict[str, Sequential], meta: dict) -> None:
    Path(path).write_bytes(encode_checkpoint(networks, meta))


def load_checkpoint(path) -> tuple[dict[str, Sequential], dict]:
    return decode_checkpoint(Path(path).read_bytes())
