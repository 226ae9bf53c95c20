"""Geometric multipath channel model for uniform linear arrays.

A channel is the superposition of ``P`` rank-one path contributions

    H = sum_p g_p * a_r(theta_a_p) @ a_t(theta_d_p)^H

with ``a_t`` / ``a_r`` the unit-norm ULA steering vectors.  Channels are plain
complex ``ndarray`` objects of shape ``(n_r, n_t)``; row index is the receive
antenna, column index the transmit antenna.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np


@dataclass(frozen=True)
class ArrayConfig:
    """Antenna counts and phase constant ``u = 2*pi*d/lambda``.

    The default ``u = pi`` corresponds to half-wavelength element spacing.
    """

    n_t: int
    n_r: int
    u: float = np.pi

    def __post_init__(self):
        if int(self.n_t) != self.n_t or self.n_t < 1:
            raise ValueError(f"n_t must be a positive integer, got {self.n_t!r}")
        if int(self.n_r) != self.n_r or self.n_r < 1:
            raise ValueError(f"n_r must be a positive integer, got {self.n_r!r}")
        if not np.isfinite(self.u) or self.u <= 0:
            raise ValueError(f"u must be positive, got {self.u!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_r, self.n_t)

    @property
    def flat_dim(self) -> int:
        """Length of the real/imaginary flattened channel vector."""
        return 2 * self.n_r * self.n_t


class PathParams(NamedTuple):
    gain: float
    aoa: float
    aod: float


def check_path(path: PathParams) -> None:
    """Raise ``ValueError`` if a path's angles fall outside ``[-pi, pi]``."""
    for name in ("aoa", "aod"):
        v = getattr(path, name)
        if not np.isfinite(v) or abs(v) > np.pi:
            raise ValueError(f"{name}={v!r} outside [-pi, pi]")
    if not np.isfinite(path.gain):
        raise ValueError(f"non-finite gain {path.gain!r}")


def _steering(theta, n: int, u: float) -> np.ndarray:
    k = np.arange(n)
    theta = np.asarray(theta, dtype=float)
    phase = np.multiply.outer(np.sin(theta), k) * u
    return np.exp(1j * phase) / np.sqrt(n)


def array_response_tx(theta, config: ArrayConfig) -> np.ndarray:
    """Transmit steering vector; entry ``k`` is ``exp(j*k*u*sin(theta))/sqrt(n_t)``.

    ``theta`` may be an array, in which case a trailing axis of length ``n_t``
    is appended.
    """
    return _steering(theta, config.n_t, config.u)


def array_response_rx(theta, config: ArrayConfig) -> np.ndarray:
    """Receive steering vector of length ``n_r`` (same convention as tx)."""
    return _steering(theta, config.n_r, config.u)


def synthesize_channel(paths: Iterable[PathParams], config: ArrayConfig) -> np.ndarray:
    """Sum of per-path outer products ``g * a_r(aoa) a_t(aod)^H``.

    An empty path list gives the zero matrix.
    """
    paths = [PathParams(*p) for p in paths]
    if not paths:
        return np.zeros(config.shape, dtype=complex)
    arr = np.array(paths, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("path parameters must be finite")
    return synthesize_batch(arr[None, :, 0], arr[None, :, 1], arr[None, :, 2], config)[0]


def synthesize_batch(gains, aoas, aods, config: ArrayConfig) -> np.ndarray:
    """Vectorized synthesis for arrays of shape ``(B, P)``; returns ``(B, n_r, n_t)``."""
    gains = np.asarray(gains, dtype=float)
    ar = array_response_rx(aoas, config)            # (B, P, n_r)
    at = array_response_tx(aods, config)            # (B, P, n_t)
    return np.einsum("bp,bpm,bpk->bmk", gains, ar, at.conj())


def nmse(reference: np.ndarray, estimate: np.ndarray) -> float:
    """Normalized squared error ``||H - H_hat||_F^2 / ||H||_F^2``."""
    reference = np.asarray(reference)
    estimate = np.asarray(estimate)
    if reference.shape != estimate.shape:
        raise ValueError(f"shape mismatch: {reference.shape} vs {estimate.shape}")
    denom = np.sum(np.abs(reference) ** 2)
    if denom == 0:
        raise ZeroDivisionError("reference channel has zero Frobenius norm")
    return float(np.sum(np.abs(reference - estimate) ** 2) / denom)


def flatten(h: np.ndarray) -> np.ndarray:
    """Real plane then imaginary plane, each row-major.

    Works on a single ``(n_r, n_t)`` channel or a batch ``(B, n_r, n_t)``.
    """
    h = np.asarray(h)
    if h.ndim == 2:
        return np.concatenate([h.real.ravel(), h.imag.ravel()])
    b = h.shape[0]
    return np.concatenate([h.real.reshape(b, -1), h.imag.reshape(b, -1)], axis=1)


def unflatten(x: np.ndarray, config: ArrayConfig) -> np.ndarray:
    """Inverse of :func:`flatten`."""
    x = np.asarray(x, dtype=float)
    half = config.n_r * config.n_t
    if x.shape[-1] != 2 * half:
        raise ValueError(f"expected trailing dimension {2 * half}, got {x.shape[-1]}")
    h = x[..., :half] + 1j * x[..., half:]
    return h.reshape(x.shape[:-1] + config.shape)


class DirectSynthesis:
    """Channel synthesis from raw path tensors with a reverse-mode backward.

    Inputs are ``(B, P)`` arrays of gains and angles; the forward output is the
    flattened ``(B, 2*n_r*n_t)`` channel batch.
    """

    def __init__(self, config: ArrayConfig):
        self.config = config
        self._cache = None
        self._m = np.arange(config.n_r)[:, None]
        self._k = np.arange(config.n_t)[None, :]
        self._c = 1.0 / np.sqrt(config.n_r * config.n_t)

    def forward(self, gains, aoas, aods) -> np.ndarray:
        u = self.config.u
        sa, sd = np.sin(aoas), np.sin(aods)
        phase = u * (sa[..., None, None] * self._m - sd[..., None, None] * self._k)
        cos, sin = np.cos(phase), np.sin(phase)
        g = gains[..., None, None] * self._c
        re = np.sum(g * cos, axis=1)
        im = np.sum(g * sin, axis=1)
        self._cache = (gains, aoas, aods, cos, sin)
        b = re.shape[0]
        return np.concatenate([re.reshape(b, -1), im.reshape(b, -1)], axis=1)

    def backward(self, grad: np.ndarray):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        gains, aoas, aods, cos, sin = self._cache
        n = self.config.n_r * self.config.n_t
        b = grad.shape[0]
        d_re = grad[:, :n].reshape(b, 1, *self.config.shape)
        d_im = grad[:, n:].reshape(b, 1, *self.config.shape)
        d_gain = self._c * np.sum(d_re * cos + d_im * sin, axis=(2, 3))
        d_phase = gains[..., None, None] * self._c * (d_im * cos - d_re * sin)
        u = self.config.u
        d_sa = u * np.sum(d_phase * self._m, axis=(2, 3))
        d_sd = -u * np.sum(d_phase * self._k, axis=(2, 3))
        return d_gain, d_sa * np.cos(aoas), d_sd * np.cos(aods)


def as_paths(rows: Sequence[Sequence[float]]) -> list[PathParams]:
    return [PathParams(float(g), float(a), float(d)) for g, a, d in rows]
