"""Angle-pair dictionary and the linear (relaxed) channel synthesis built on it."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, MagicError, TruncatedError, VersionError
from .pbgc import ArrayConfig, PathParams, array_response_rx, array_response_tx, flatten

DEFAULT_MEMORY_BUDGET = 1 << 30  # bytes of complex128 atom storage


@dataclass(frozen=True)
class AngleGrid:
    theta_min: float = -np.pi / 2
    theta_max: float = np.pi / 2
    resolution: int = 64

    def __post_init__(self):
        if not self.theta_min < self.theta_max:
            raise ValueError("theta_min must be below theta_max")
        if int(self.resolution) != self.resolution or self.resolution < 2:
            raise ValueError(f"resolution must be an integer >= 2, got {self.resolution!r}")

    @property
    def delta(self) -> float:
        return (self.theta_max - self.theta_min) / self.resolution

    @property
    def angles(self) -> np.ndarray:
        """All interval midpoints, ascending."""
        return self.theta_min + (np.arange(self.resolution) + 0.5) * self.delta


def grid_angle(index: int, grid: AngleGrid) -> float:
    if not 0 <= index < grid.resolution:
        raise IndexError(f"grid index {index} outside [0, {grid.resolution})")
    return grid.theta_min + (index + 0.5) * grid.delta


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Precomputed atoms ``a_r(theta_i) a_t(theta_j)^H``.

    ``atoms`` has shape ``(R, R, n_r, n_t)``.  ``matrix`` is the same data as a
    real ``(R*R, 2*n_r*n_t)`` array, one flattened atom per row, which is what
    the relaxed synthesis multiplies against.
    """

    atoms: np.ndarray
    grid: AngleGrid
    config: ArrayConfig
    matrix: np.ndarray = field(repr=False)

    @property
    def resolution(self) -> int:
        return self.grid.resolution


def build_dictionary(grid: AngleGrid, config: ArrayConfig,
                     memory_budget: int = DEFAULT_MEMORY_BUDGET) -> Dictionary:
    r = grid.resolution
    need = r * r * config.n_r * config.n_t * 16 * 2  # complex atoms + real matrix
    if need > memory_budget:
        raise MemoryError(
            f"dictionary needs {need} bytes (R={r}, n_r={config.n_r}, n_t={config.n_t}), "
            f"budget is {memory_budget}")
    theta = grid.angles
    ar = array_response_rx(theta, config)           # (R, n_r)
    at = array_response_tx(theta, config)           # (R, n_t)
    atoms = np.einsum("im,jk->ijmk", ar, at.conj())
    atoms.setflags(write=False)
    matrix = flatten(atoms.reshape(r * r, config.n_r, config.n_t))
    matrix.setflags(write=False)
    return Dictionary(atoms=atoms, grid=grid, config=config, matrix=matrix)


def _check_gain_shape(w: np.ndarray, d: Dictionary) -> None:
    r = d.resolution
    if w.shape[-2:] != (r, r):
        raise ValueError(f"gain matrix shape {w.shape} does not match resolution {r}")


def relaxed_synthesize(w: np.ndarray, d: Dictionary) -> np.ndarray:
    """``sum_ij W[i, j] * D[i, j]``; accepts a single ``(R, R)`` or a batch ``(B, R, R)``."""
    w = np.asarray(w, dtype=float)
    _check_gain_shape(w, d)
    return np.tensordot(w, d.atoms, axes=([-2, -1], [0, 1]))


def _cell_index(theta: float, grid: AngleGrid) -> int:
    if not grid.theta_min <= theta < grid.theta_max:
        raise ValueError(f"angle {theta!r} outside [{grid.theta_min}, {grid.theta_max})")
    # Nearest midpoint is the containing interval; on a boundary the lower one wins.
    pos = (theta - grid.theta_min) / grid.delta
    idx = int(np.floor(pos))
    if idx > 0 and np.isclose(pos, idx, rtol=0, atol=1e-12):
        idx -= 1
    return min(idx, grid.resolution - 1)


def project_paths(paths, grid: AngleGrid) -> np.ndarray:
    """Deposit each path gain into the cell nearest its (aoa, aod)."""
    w = np.zeros((grid.resolution, grid.resolution))
    for p in paths:
        p = PathParams(*p)
        w[_cell_index(p.aoa, grid), _cell_index(p.aod, grid)] += p.gain
    return w


def extract_paths(w: np.ndarray, grid: AngleGrid, rel_threshold: float = 0.1) -> list[PathParams]:
    """Read paths off a gain matrix as strict local maxima of ``|W|``.

    A cell is kept when its magnitude is strictly larger than all of its
    (up to 8) neighbours and at least ``rel_threshold * max|W|``.  Results are
    sorted by decreasing ``|gain|``.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (grid.resolution, grid.resolution):
        raise ValueError(f"gain matrix shape {w.shape} does not match resolution {grid.resolution}")
    if not np.all(np.isfinite(w)):
        raise ValueError("gain matrix has non-finite entries")
    if not 0 < rel_threshold <= 1:
        raise ValueError(f"rel_threshold must lie in (0, 1], got {rel_threshold!r}")
    mag = np.abs(w)
    peak = mag.max()
    if peak == 0:
        return []
    padded = np.pad(mag, 1, constant_values=-np.inf)
    r = grid.resolution
    is_max = np.ones_like(mag, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            is_max &= mag > padded[1 + di:1 + di + r, 1 + dj:1 + dj + r]
    is_max &= mag >= rel_threshold * peak
    ii, jj = np.nonzero(is_max)
    order = np.argsort(-mag[ii, jj], kind="stable")
    theta = grid.angles
    return [PathParams(float(w[i, j]), float(theta[i]), float(theta[j]))
            for i, j in zip(ii[order], jj[order])]


# Dictionary cache: 'DICT', u16 version, u16 R, u16 n_r, u16 n_t, f64 u,
# f64 theta_min, f64 theta_max, then per atom (i-major, j-minor) f64 real
# plane row-major followed by f64 imaginary plane row-major.
_DICT_MAGIC = b"DICT"
_DICT_VERSION = 1
_DICT_HEADER = struct.Struct("<4sHHHHddd")


def save_dictionary(d: Dictionary, path) -> None:
    header = _DICT_HEADER.pack(_DICT_MAGIC, _DICT_VERSION, d.resolution, d.config.n_r,
                               d.config.n_t, d.config.u, d.grid.theta_min, d.grid.theta_max)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(d.matrix.astype("<f8").tobytes())


def load_dictionary(path, expect: tuple[AngleGrid, ArrayConfig] | None = None) -> Dictionary:
    """Load a cached dictionary; if ``expect`` is given the header must match it."""
    raw = Path(path).read_bytes()
    if len(raw) < _DICT_HEADER.size:
        raise TruncatedError("dictionary header truncated")
    magic, version, r, n_r, n_t, u, tmin, tmax = _DICT_HEADER.unpack_from(raw)
    if magic != _DICT_MAGIC:
        raise MagicError(f"bad magic {magic!r}, expected {_DICT_MAGIC!r}")
    if version != _DICT_VERSION:
        raise VersionError(f"unsupported dictionary version {version}")
    grid, config = AngleGrid(tmin, tmax, r), ArrayConfig(n_t, n_r, u)
    if expect is not None and (grid, config) != tuple(expect):
        raise FormatError(f"cache key {(grid, config)} does not match {expect}")
    count = r * r * 2 * n_r * n_t
    body = raw[_DICT_HEADER.size:]
    if len(body) != count * 8:
        raise TruncatedError(f"dictionary payload has {len(body)} bytes, expected {count * 8}")
    matrix = np.frombuffer(body, dtype="<f8").astype(float).reshape(r * r, 2 * n_r * n_t)
    half = n_r * n_t
    atoms = (matrix[:, :half] + 1j * matrix[:, half:]).reshape(r, r, n_r, n_t)
    atoms.setflags(write=False)
    matrix.setflags(write=False)
    return Dictionary(atoms=atoms, grid=grid, config=config, matrix=matrix)
