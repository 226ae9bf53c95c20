"""Channel compression autoencoder and the train/test cross-evaluation grid."""
from __future__ import annotations

import csv
import dataclasses
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .generative import mean_frobenius
from .neural import Adam, Sequential, decode_checkpoint, encode_checkpoint, mlp
from .pbgc import ArrayConfig, flatten, unflatten


@dataclass
class CompressorConfig:
    bottleneck_dim: int = 32
    widths: tuple[int, ...] = (256,)
    epochs: int = 300
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.bottleneck_dim < 1 or self.epochs < 1 or self.batch_size < 2:
            raise ValueError("bottleneck_dim and epochs must be positive, batch_size >= 2")


@dataclass
class Compressor:
    encoder: Sequential
    decoder: Sequential
    config: CompressorConfig
    array: ArrayConfig
    scale: float
    history: list[float] = field(default_factory=list)

    def reconstruct(self, channels: np.ndarray) -> np.ndarray:
        x = flatten(np.asarray(channels)) / self.scale
        code = self.encoder.forward(x, train=False)
        return unflatten(self.decoder.forward(code, train=False) * self.scale, self.array)

    def nmse(self, dataset) -> float:
        """Mean per-sample NMSE over a dataset or channel stack."""
        h = np.asarray(getattr(dataset, "channels", dataset))
        h_hat = self.reconstruct(h)
        err = np.sum(np.abs(h - h_hat) ** 2, axis=(1, 2))
        return float(np.mean(err / np.sum(np.abs(h) ** 2, axis=(1, 2))))

    def to_bytes(self) -> bytes:
        cfg = dataclasses.asdict(self.config)
        cfg["widths"] = list(self.config.widths)
        meta = {"kind": "compressor", "config": cfg, "array": dataclasses.asdict(self.array),
                "scale": self.scale, "history": self.history}
        return encode_checkpoint({"encoder": self.encoder, "decoder": self.decoder}, meta)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Compressor":
        nets, meta = decode_checkpoint(raw)
        if meta.get("kind") != "compressor" or set(nets) != {"encoder", "decoder"}:
            raise FormatError("checkpoint does not hold a compressor")
        try:
            return cls(nets["encoder"], nets["decoder"], CompressorConfig(**meta["config"]),
                       ArrayConfig(**meta["array"]), float(meta["scale"]), list(meta["history"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"invalid compressor metadata: {exc!r}") from None


def train_compressor(dataset, config: CompressorConfig) -> Compressor:
    """Fit a dense bottleneck autoencoder on squared reconstruction error.

    Channels are divided by their mean Frobenius norm before training; the
    history holds the per-epoch mean training NMSE.
    """
    h = np.asarray(getattr(dataset, "channels", dataset))
    if h.ndim != 3 or len(h) < 2:
        raise ValueError("need at least 2 channels of shape (n_r, n_t)")
    array = ArrayConfig(n_t=h.shape[2], n_r=h.shape[1])
    dim = array.flat_dim
    if config.bottleneck_dim >= dim:
        raise ValueError(f"bottleneck {config.bottleneck_dim} must be below the channel dimension {dim}")
    rng = np.random.default_rng(config.seed)
    scale = mean_frobenius(h)
    encoder = mlp((dim, *config.widths, config.bottleneck_dim), rng)
    decoder = mlp((config.bottleneck_dim, *config.widths[::-1], dim), rng)
    model = Compressor(encoder, decoder, config, array, scale)
    params = {f"e{k}": v for k, v in encoder.params().items()}
    params.update({f"d{k}": v for k, v in decoder.params().items()})
    opt = Adam(params, learning_rate=config.learning_rate)

    x_all = flatten(h) / scale
    energy = np.sum(x_all ** 2, axis=1)
    n = len(x_all)
    bs = min(config.batch_size, n)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        acc, count = 0.0, 0
        for bi, lo in enumerate(range(0, n, bs)):
            idx = order[lo:lo + bs]
            if len(idx) < 2:
                continue
            x = x_all[idx]
            err = decoder.forward(encoder.forward(x)) - x
            sq = np.sum(err ** 2, axis=1)
            if not np.all(np.isfinite(sq)):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {bi}")
            encoder.backward(decoder.backward(2.0 * err / len(idx)))
            grads = {f"e{k}": v for k, v in encoder.grads().items()}
            grads.update({f"d{k}": v for k, v in decoder.grads().items()})
            opt.step(params, grads)
            acc += np.sum(sq / energy[idx])
            count += len(idx)
        model.history.append(acc / count)
    return model


@dataclass
class NmseMatrix:
    rows: list[str]
    cols: list[str]
    values: np.ndarray          # values[i, j]: trained on rows[i], tested on cols[j]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["train\\test", *self.cols])
        for name, row in zip(self.rows, self.values):
            w.writerow([name, *(repr(float(v)) for v in row)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "NmseMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        return cls([r[0] for r in rows[1:]], rows[0][1:],
                   np.array([r[1:] for r in rows[1:]], dtype=float))

    def __getitem__(self, key):
        r, c = key
        return float(self.values[self.rows.index(r), self.cols.index(c)])


def _fit_and_score(args):
    train_set, tests, config = args
    model = train_compressor(train_set, config)
    return [model.nmse(t) for t in tests]


def cross_evaluate(train_sets: dict, test_sets: dict, config: CompressorConfig,
                   jobs: int = 1) -> NmseMatrix:
    """Train one compressor per training set and score it on every test set."""
    shapes = {np.asarray(getattr(d, "channels", d)).shape[1:]
              for d in list(train_sets.values()) + list(test_sets.values())}
    if len(shapes) != 1:
        raise ValueError(f"all sets must share one channel shape, got {sorted(shapes)}")
    tests = list(test_sets.values())
    work = [(d, tests, config) for d in train_sets.values()]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_fit_and_score, work))
    else:
        rows = [_fit_and_score(w) for w in work]
    return NmseMatrix(list(train_sets), list(test_sets), np.array(rows))
