"""Variational autoencoders that generate channels through a physics layer.

Two decoders share one encoder:

``direct``
    The decoder emits ``3P`` numbers, read as ``P`` (gain, aoa, aod) triples,
    and the channel is rebuilt with the multipath model.  Angles are squashed
    onto ``(-pi, pi)`` with ``pi * tanh``.
``relaxed``
    The decoder emits an ``R x R`` real gain matrix that weights the atoms of a
    precomputed angle-pair dictionary; the channel is linear in the output.

Training minimises, per sample and averaged over the mini-batch,
``||H - H_hat||_F^2 + alpha_d * KL + alpha_s * ||W||_1`` on channels divided
by the dataset's mean Frobenius norm.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .dictionary import AngleGrid, Dictionary
from .errors import FormatError
from .neural import Adam, Sequential, decode_checkpoint, encode_checkpoint, mlp, reparameterize
from .pbgc import ArrayConfig, DirectSynthesis, PathParams, flatten, unflatten

MODES = ("direct", "relaxed")


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class VaeConfig:
    latent_dim: int = 64
    encoder_widths: tuple[int, ...] = (512, 256)
    decoder_widths: tuple[int, ...] = (256, 512)
    alpha_d: float = 1e-3
    alpha_s: float = 1e-4
    learning_rate: float = 1e-3
    epochs: int = 300
    batch_size: int = 256
    seed: int = 0
    mode: str = "relaxed"
    n_paths: int = 5          # direct mode only
    resolution: int = 64      # relaxed mode only
    theta_min: float = -np.pi / 2
    theta_max: float = np.pi / 2

    def __post_init__(self):
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        self.decoder_widths = tuple(int(w) for w in self.decoder_widths)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch normalization)")
        if self.alpha_d < 0 or self.alpha_s < 0:
            raise ValueError("alpha_d and alpha_s must be nonnegative")
        if self.epochs < 1 or self.n_paths < 1:
            raise ValueError("epochs and n_paths must be positive")
        if any(w < 1 for w in self.encoder_widths + self.decoder_widths):
            raise ValueError("layer widths must be positive")

    @property
    def grid(self) -> AngleGrid:
        return AngleGrid(self.theta_min, self.theta_max, self.resolution)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["encoder_widths"] = list(self.encoder_widths)
        d["decoder_widths"] = list(self.decoder_widths)
        return d


@dataclass
class VaeModel:
    encoder: Sequential
    decoder: Sequential
    config: VaeConfig
    array: ArrayConfig
    scale: float = 1.0
    history: list[dict] = field(default_factory=list)

    @property
    def output_dim(self) -> int:
        if self.config.mode == "direct":
            return 3 * self.config.n_paths
        return self.config.resolution ** 2

    def networks(self) -> dict[str, Sequential]:
        return {"encoder": self.encoder, "decoder": self.decoder}

    def to_bytes(self) -> bytes:
        meta = {
            "kind": "vae",
            "config": self.config.to_dict(),
            "array": dataclasses.asdict(self.array),
            "scale": self.scale,
            "history": self.history,
        }
        return encode_checkpoint(self.networks(), meta)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "VaeModel":
        nets, meta = decode_checkpoint(raw)
        if meta.get("kind") != "vae" or set(nets) != {"encoder", "decoder"}:
            raise FormatError("checkpoint does not hold a VAE model")
        try:
            return cls(nets["encoder"], nets["decoder"], VaeConfig(**meta["config"]),
                       ArrayConfig(**meta["array"]), float(meta["scale"]), list(meta["history"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"invalid VAE metadata: {exc!r}") from None

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "VaeModel":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def init_model(config: VaeConfig, array: ArrayConfig, scale: float = 1.0,
               rng: np.random.Generator | None = None) -> VaeModel:
    if rng is None:
        rng = np.random.default_rng(config.seed)
    z = config.latent_dim
    out = 3 * config.n_paths if config.mode == "direct" else config.resolution ** 2
    encoder = mlp((array.flat_dim, *config.encoder_widths, 2 * z), rng)
    decoder = mlp((z, *config.decoder_widths, out), rng)
    if config.mode == "relaxed":
        # R^2 atoms summed incoherently would start ~R times too loud.
        decoder.layers[-1].params["weight"] /= config.resolution
    return VaeModel(encoder, decoder, config, array, scale)


def squash_angle(raw):
    return np.pi * np.tanh(raw)


def _as_batch(h: np.ndarray, array: ArrayConfig) -> tuple[np.ndarray, bool]:
    h = np.asarray(h)
    single = h.ndim == 2
    if single:
        h = h[None]
    if h.shape[1:] != array.shape:
        raise ValueError(f"channel shape {h.shape[1:]} does not match array {array.shape}")
    return h, single


def encode(model: VaeModel, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and log-variance (eval-mode batch normalization)."""
    batch, single = _as_batch(h, model.array)
    out = model.encoder.forward(flatten(batch) / model.scale, train=False)
    z = model.config.latent_dim
    mu, logvar = out[:, :z], out[:, z:]
    return (mu[0], logvar[0]) if single else (mu, logvar)


def _decode_raw(model: VaeModel, z: np.ndarray) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    if single:
        z = z[None]
    if z.shape[1] != model.config.latent_dim:
        raise ValueError(f"latent vector has width {z.shape[1]}, model uses {model.config.latent_dim}")
    return model.decoder.forward(z, train=False), single


def _split_direct(raw: np.ndarray, n_paths: int):
    triples = raw.reshape(raw.shape[0], n_paths, 3)
    return triples[..., 0], squash_angle(triples[..., 1]), squash_angle(triples[..., 2])


def decode_direct(model: VaeModel, z: np.ndarray) -> list:
    """Path triples for ``z``; gains are in physical (un-normalised) units.

    Returns a list of ``PathParams`` for a single latent vector, or a list of
    such lists for a batch.
    """
    if model.config.mode != "direct":
        raise ValueError("decode_direct needs a direct-mode model")
    raw, single = _decode_raw(model, z)
    g, ta, td = _split_direct(raw, model.config.n_paths)
    g = g * model.scale
    out = [[PathParams(*map(float, t)) for t in zip(gb, ab, db)] for gb, ab, db in zip(g, ta, td)]
    return out[0] if single else out


def decode_relaxed(model: VaeModel, z: np.ndarray) -> np.ndarray:
    """Gain matrix (physical units) for one latent vector or a batch."""
    if model.config.mode != "relaxed":
        raise ValueError("decode_relaxed needs a relaxed-mode model")
    raw, single = _decode_raw(model, z)
    r = model.config.resolution
    w = raw.reshape(-1, r, r) * model.scale
    return w[0] if single else w


def kl_divergence(mu, logvar):
    """KL of ``N(mu, exp(logvar))`` from ``N(0, I)``, summed over the last axis."""
    mu, logvar = np.asarray(mu), np.asarray(logvar)
    return 0.5 * np.sum(mu ** 2 + np.exp(logvar) - logvar - 1.0, axis=-1)


def vae_loss(h, h_hat, mu, logvar, w=None, alpha_d=1e-3, alpha_s=1e-4):
    """Return ``(total, mse, kl, l1)``, averaged over the batch when batched.

    ``h``/``h_hat`` are complex channels of matching shape (one or a batch);
    ``w`` is the gain matrix (relaxed mode) or ``None``.
    """
    h, h_hat = np.asarray(h), np.asarray(h_hat)
    if h.shape != h_hat.shape:
        raise ValueError(f"shape mismatch: {h.shape} vs {h_hat.shape}")
    mu, logvar = np.asarray(mu, dtype=float), np.asarray(logvar, dtype=float)
    if mu.shape != logvar.shape:
        raise ValueError("mu and logvar shapes differ")
    diff = np.abs(h - h_hat) ** 2
    mse = np.mean(diff.reshape(-1, h.shape[-2] * h.shape[-1]).sum(axis=1))
    kl = np.mean(kl_divergence(mu.reshape(-1, mu.shape[-1]), logvar.reshape(-1, mu.shape[-1])))
    if w is None:
        l1 = 0.0
    else:
        w = np.asarray(w, dtype=float)
        l1 = np.mean(np.abs(w.reshape(-1, w.shape[-2] * w.shape[-1])).sum(axis=1))
    total = mse + alpha_d * kl + alpha_s * l1
    return float(total), float(mse), float(kl), float(l1)


class _Pipeline:
    """Forward/backward through encoder, sampling, decoder and the physics layer."""

    def __init__(self, model: VaeModel, dictionary: Dictionary | None):
        self.model = model
        cfg = model.config
        if cfg.mode == "relaxed":
            if dictionary is None:
                raise ValueError("relaxed mode needs a dictionary")
            if dictionary.config != model.array or dictionary.grid != cfg.grid:
                raise ValueError("dictionary does not match the model's array/grid configuration")
            self.atoms = dictionary.matrix
        else:
            if dictionary is not None:
                raise ValueError("direct mode takes no dictionary")
            self.synth = DirectSynthesis(model.array)

    def synthesize(self, raw):
        if self.model.config.mode == "relaxed":
            return raw @ self.atoms
        return self.synth.forward(*_split_direct(raw, self.model.config.n_paths))

    def loss_and_grads(self, x: np.ndarray, noise: np.ndarray):
        """One training-mode pass on a flattened, normalised batch ``x``.

        Returns ``(parts, x_hat)`` with ``parts = (total, mse, kl, l1, nmse)``;
        gradients are left in the layers' ``grads``.
        """
        m, cfg = self.model, self.model.config
        b, zd = x.shape[0], cfg.latent_dim
        enc = m.encoder.forward(x, train=True)
        mu, logvar = enc[:, :zd], enc[:, zd:]
        std = np.exp(0.5 * logvar)
        z = mu + std * noise
        raw = m.decoder.forward(z, train=True)
        x_hat = self.synthesize(raw)

        err = x_hat - x
        sq = np.sum(err ** 2, axis=1)
        mse = sq.mean()
        kl = kl_divergence(mu, logvar).mean()
        l1 = np.abs(raw).sum(axis=1).mean() if cfg.mode == "relaxed" else 0.0
        total = mse + cfg.alpha_d * kl + cfg.alpha_s * l1
        nmse = np.mean(sq / np.maximum(np.sum(x ** 2, axis=1), 1e-300))

        d_xhat = 2.0 * err / b
        if cfg.mode == "relaxed":
            d_raw = d_xhat @ self.atoms.T + cfg.alpha_s * np.sign(raw) / b
        else:
            d_g, d_ta, d_td = self.synth.backward(d_xhat)
            tri = raw.reshape(b, cfg.n_paths, 3)
            d_tri = np.stack([
                d_g,
                d_ta * np.pi * (1 - np.tanh(tri[..., 1]) ** 2),
                d_td * np.pi * (1 - np.tanh(tri[..., 2]) ** 2),
            ], axis=-1)
            d_raw = d_tri.reshape(b, -1)
        d_z = m.decoder.backward(d_raw)
        d_mu = d_z + cfg.alpha_d * mu / b
        d_logvar = d_z * 0.5 * std * noise + cfg.alpha_d * 0.5 * (np.exp(logvar) - 1.0) / b
        m.encoder.backward(np.concatenate([d_mu, d_logvar], axis=1))
        return (float(total), float(mse), float(kl), float(l1), float(nmse)), x_hat

    def params(self) -> dict[str, np.ndarray]:
        return {f"{prefix}.{name}": arr
                for prefix, net in self.model.networks().items()
                for name, arr in net.params().items()}

    def grads(self) -> dict[str, np.ndarray]:
        return {f"{prefix}.{name}": arr
                for prefix, net in self.model.networks().items()
                for name, arr in net.grads().items()}


def _stack_dataset(dataset) -> np.ndarray:
    channels = getattr(dataset, "channels", dataset)
    arr = np.asarray(channels) if not isinstance(channels, np.ndarray) else channels
    if arr.ndim != 3:
        raise ValueError("dataset must be a sequence of equally shaped 2-D channels")
    return arr


def mean_frobenius(channels: np.ndarray) -> float:
    return float(np.mean(np.sqrt(np.sum(np.abs(channels) ** 2, axis=(1, 2)))))


def train(dataset, dictionary: Dictionary | None, config: VaeConfig,
          array: ArrayConfig | None = None, init: VaeModel | None = None,
          callback=None) -> VaeModel:
    """Mini-batch Adam training; returns the model with a per-epoch history.

    ``dataset`` is a ``ChannelDataset`` or any sequence of equally shaped
    complex channels.  ``init`` continues training an existing model whose
    shapes must match.  ``callback(epoch, record)`` runs after every epoch.
    """
    channels = _stack_dataset(dataset)
    if len(channels) == 0:
        raise ValueError("empty dataset")
    if array is None:
        array = getattr(getattr(dataset, "scenario", None), "array", None)
        if array is None and dictionary is not None:
            array = dictionary.config
        if array is None:
            array = ArrayConfig(n_t=channels.shape[2], n_r=channels.shape[1])
    if channels.shape[1:] != array.shape:
        raise ValueError(f"channel shape {channels.shape[1:]} does not match array {array.shape}")

    rng = np.random.default_rng(config.seed)
    if init is None:
        scale = mean_frobenius(channels)
        if scale == 0:
            raise ValueError("dataset contains only zero channels")
        model = init_model(config, array, scale, rng)
    else:
        fresh = init_model(config, array)
        if (init.array != array or
                [l.spec() for l in init.encoder.layers] != [l.spec() for l in fresh.encoder.layers] or
                [l.spec() for l in init.decoder.layers] != [l.spec() for l in fresh.decoder.layers]):
            raise ValueError("initial model shapes do not match the configuration")
        model = VaeModel(init.encoder, init.decoder, config, array, init.scale, list(init.history))

    pipe = _Pipeline(model, dictionary)
    params = pipe.params()
    opt = Adam(params, learning_rate=config.learning_rate)
    x_all = flatten(channels) / model.scale
    n = len(x_all)
    bs = min(config.batch_size, n)
    if n < 2:
        raise ValueError("need at least 2 samples for batch-normalized training")
    start = len(model.history)
    for epoch in range(start, start + config.epochs):
        order = rng.permutation(n)
        sums = np.zeros(5)
        count = 0
        for bi, lo in enumerate(range(0, n, bs)):
            idx = order[lo:lo + bs]
            if len(idx) < 2:
                continue
            noise = rng.standard_normal((len(idx), config.latent_dim))
            parts, _ = pipe.loss_and_grads(x_all[idx], noise)
            if not np.isfinite(parts[0]):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {bi}")
            opt.step(params, pipe.grads())
            sums += np.array(parts) * len(idx)
            count += len(idx)
        total, mse, kl, l1, nm = sums / count
        record = {"epoch": epoch, "total": total, "mse": mse, "kl": kl, "l1": l1, "nmse": nm}
        model.history.append(record)
        if callback is not None:
            callback(epoch, record)
    return model


def generate(model: VaeModel, dictionary: Dictionary | None, count: int, seed: int = 0,
             chunk: int = 1024):
    """Sample ``count`` channels from the prior.

    Returns ``(channels, gains)``: complex ``(count, n_r, n_t)`` channels and,
    in relaxed mode, the ``(count, R, R)`` gain matrices (``None`` in direct
    mode).  Both are in physical units.
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    cfg = model.config
    r = cfg.resolution
    rng = np.random.default_rng(seed)
    pipe = _Pipeline(model, dictionary)
    z = rng.standard_normal((count, cfg.latent_dim))
    chans = np.zeros((count,) + model.array.shape, dtype=complex)
    gains = np.zeros((count, r, r)) if cfg.mode == "relaxed" else None
    for lo in range(0, count, chunk):
        raw = model.decoder.forward(z[lo:lo + chunk], train=False)
        chans[lo:lo + chunk] = unflatten(pipe.synthesize(raw), model.array) * model.scale
        if gains is not None:
            gains[lo:lo + chunk] = raw.reshape(-1, r, r) * model.scale
    return chans, gains


def reconstruct(model: VaeModel, dictionary: Dictionary | None, h: np.ndarray) -> np.ndarray:
    """Encode to the posterior mean and decode through the physics layer (eval mode)."""
    batch, single = _as_batch(h, model.array)
    mu, _ = encode(model, batch)
    raw = model.decoder.forward(mu, train=False)
    out = unflatten(_Pipeline(model, dictionary).synthesize(raw), model.array) * model.scale
    return out[0] if single else out
