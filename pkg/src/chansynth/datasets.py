"""Synthetic scenarios, labelled channel datasets and the CHNL file format.

CHNL layout, little-endian throughout::

    offset  size  field
    0       4     magic b"CHNL"
    4       2     u16 format version (1)
    6       1     u8 flags: bit 0 truth present, bit 1 scenario text present
    7       4     u32 n_samples
    11      2     u16 n_r
    13      2     u16 n_t
    15      2     u16 P (paths per sample in the truth block, 0 without truth)
    17      8     f64 normalization scale
    25      ...   channels: per sample, f32 real plane (row-major n_r x n_t)
                  followed by f32 imaginary plane
    ...     ...   truth (flag bit 0): per sample, per path, f64 (gain, aoa, aod)
    ...     ...   scenario (flag bit 1): u32 byte length, UTF-8 scenario text

Channels are stored in single precision, so a freshly synthesized dataset is
rounded on its first save; after that, save/load round-trips are bit-exact.
"""
from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import MagicError, ShapeError, TruncatedError, VersionError
from .pbgc import ArrayConfig, PathParams, synthesize_batch


@dataclass(frozen=True)
class PathDistribution:
    """Independent uniform ranges for one path's gain and angles."""

    gain_range: tuple[float, float] = (0.001, 0.01)
    aoa_range: tuple[float, float] = (-np.pi / 2, np.pi / 2)
    aod_range: tuple[float, float] = (-np.pi / 2, np.pi / 2)

    def __post_init__(self):
        for name in ("gain_range", "aoa_range", "aod_range"):
            lo, hi = map(float, getattr(self, name))
            object.__setattr__(self, name, (lo, hi))
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise ValueError(f"{name} must satisfy low <= high, got {(lo, hi)}")
            if name != "gain_range" and (lo < -np.pi or hi > np.pi):
                raise ValueError(f"{name} {(lo, hi)} leaves [-pi, pi]")

    def contains(self, aoa, aod) -> np.ndarray:
        aoa, aod = np.asarray(aoa), np.asarray(aod)
        return ((self.aoa_range[0] <= aoa) & (aoa <= self.aoa_range[1]) &
                (self.aod_range[0] <= aod) & (aod <= self.aod_range[1]))


@dataclass(frozen=True)
class ScenarioSpec:
    paths: tuple[PathDistribution, ...]
    array: ArrayConfig = ArrayConfig(16, 16)
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))
        if len(self.paths) < 1:
            raise ValueError("a scenario needs at least one path")

    @property
    def n_paths(self) -> int:
        return len(self.paths)


@dataclass
class ChannelDataset:
    """Channels ``(N, n_r, n_t)`` with optional ``(N, P, 3)`` ground truth.

    Stored channels times ``normalization_scale`` give physical channels.
    """

    channels: np.ndarray
    truth: np.ndarray | None = None
    scenario: ScenarioSpec | None = None
    normalization_scale: float = 1.0

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=complex)
        if self.channels.ndim != 3:
            raise ValueError("channels must have shape (N, n_r, n_t)")
        if self.truth is not None:
            self.truth = np.asarray(self.truth, dtype=float)
            if self.truth.ndim != 3 or self.truth.shape[2] != 3 or len(self.truth) != len(self.channels):
                raise ValueError("truth must have shape (N, P, 3) matching the channels")

    def __len__(self):
        return len(self.channels)

    @property
    def array(self) -> ArrayConfig:
        if self.scenario is not None:
            return self.scenario.array
        return ArrayConfig(n_t=self.channels.shape[2], n_r=self.channels.shape[1])

    def paths(self, index: int) -> list[PathParams]:
        if self.truth is None:
            raise ValueError("dataset carries no ground truth")
        return [PathParams(*map(float, row)) for row in self.truth[index]]

    def subset(self, idx) -> "ChannelDataset":
        idx = np.asarray(idx, dtype=int)
        return replace(self, channels=self.channels[idx],
                       truth=None if self.truth is None else self.truth[idx])


def _sample_stream(spec: ScenarioSpec, seed: int, index: int) -> np.ndarray:
    rng = np.random.default_rng([seed, index])
    lows = np.array([[p.gain_range[0], p.aoa_range[0], p.aod_range[0]] for p in spec.paths])
    highs = np.array([[p.gain_range[1], p.aoa_range[1], p.aod_range[1]] for p in spec.paths])
    return lows + (highs - lows) * rng.random(lows.shape)


def generate_dataset(spec: ScenarioSpec, count: int, seed: int = 0) -> ChannelDataset:
    """Draw ``count`` labelled channels; sample ``i`` uses its own RNG stream ``(seed, i)``."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    truth = np.empty((count, spec.n_paths, 3))
    for i in range(count):
        truth[i] = _sample_stream(spec, seed, i)
    channels = synthesize_batch(truth[..., 0], truth[..., 1], truth[..., 2], spec.array) \
        if count else np.zeros((0,) + spec.array.shape, dtype=complex)
    return ChannelDataset(channels, truth, spec, 1.0)


def split(dataset: ChannelDataset, fractions, seed: int = 0) -> list[ChannelDataset]:
    """Seeded shuffle, then contiguous parts sized by ``fractions``."""
    fractions = np.asarray(fractions, dtype=float)
    if fractions.ndim != 1 or len(fractions) == 0 or np.any(fractions <= 0):
        raise ValueError("fractions must be a nonempty list of positive numbers")
    if abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions sum to {fractions.sum()}, expected 1")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    bounds = np.rint(np.concatenate([[0], np.cumsum(fractions)]) * n).astype(int)
    bounds[-1] = n
    return [dataset.subset(order[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]


# --- scenario text ----------------------------------------------------------

class ScenarioSyntaxError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


_KEY = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*?)\s*$")


def parse_scenario(text: str) -> ScenarioSpec:
    """Parse the key-value scenario format (see :func:`format_scenario`)."""
    top: dict[str, tuple[int, str]] = {}
    blocks: list[tuple[int, dict]] = []
    current = top
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line != "[path]":
                raise ScenarioSyntaxError(lineno, f"unknown section {line!r}")
            current = {}
            blocks.append((lineno, current))
            continue
        m = _KEY.match(line)
        if m is None:
            raise ScenarioSyntaxError(lineno, f"expected 'key = value', got {raw.strip()!r}")
        key, value = m.groups()
        if key in current:
            raise ScenarioSyntaxError(lineno, f"duplicate key {key!r}")
        current[key] = (lineno, value)

    def number(entry, key, cast=float):
        lineno, value = entry
        try:
            return cast(value)
        except ValueError:
            raise ScenarioSyntaxError(lineno, f"{key} must be a number, got {value!r}") from None

    def pair(entry, key):
        lineno, value = entry
        parts = value.replace(",", " ").split()
        if len(parts) != 2:
            raise ScenarioSyntaxError(lineno, f"{key} needs 'low high', got {value!r}")
        return tuple(number((lineno, p), key) for p in parts)

    allowed = {"name", "n_t", "n_r", "u"}
    for key, (lineno, _) in top.items():
        if key not in allowed:
            raise ScenarioSyntaxError(lineno, f"unknown key {key!r}")
    for key in ("n_t", "n_r"):
        if key not in top:
            raise ScenarioSyntaxError(1, f"missing required key {key!r}")
    try:
        array = ArrayConfig(n_t=number(top["n_t"], "n_t", int), n_r=number(top["n_r"], "n_r", int),
                            u=number(top["u"], "u") if "u" in top else np.pi)
    except ScenarioSyntaxError:
        raise
    except ValueError as exc:
        raise ScenarioSyntaxError(top["n_t"][0], str(exc)) from None
    if not blocks:
        raise ScenarioSyntaxError(max(1, len(text.splitlines())), "no [path] blocks")
    paths = []
    for lineno, block in blocks:
        for key, (kl, _) in block.items():
            if key not in {"gain", "aoa", "aod"}:
                raise ScenarioSyntaxError(kl, f"unknown path key {key!r}")
        missing = {"gain", "aoa", "aod"} - set(block)
        if missing:
            raise ScenarioSyntaxError(lineno, f"path block missing {sorted(missing)}")
        try:
            paths.append(PathDistribution(pair(block["gain"], "gain"), pair(block["aoa"], "aoa"),
                                          pair(block["aod"], "aod")))
        except ScenarioSyntaxError:
            raise
        except ValueError as exc:
            raise ScenarioSyntaxError(lineno, str(exc)) from None
    name = top["name"][1] if "name" in top else "scenario"
    return ScenarioSpec(tuple(paths), array, name)


def format_scenario(spec: ScenarioSpec) -> str:
    lines = [f"name = {spec.name}", f"n_t = {spec.array.n_t}", f"n_r = {spec.array.n_r}",
             f"u = {spec.array.u!r}"]
    for p in spec.paths:
        lines += ["", "[path]",
                  f"gain = {p.gain_range[0]!r} {p.gain_range[1]!r}",
                  f"aoa = {p.aoa_range[0]!r} {p.aoa_range[1]!r}",
                  f"aod = {p.aod_range[0]!r} {p.aod_range[1]!r}"]
    return "\n".join(lines) + "\n"


def load_scenario(path) -> ScenarioSpec:
    return parse_scenario(Path(path).read_text())


# --- presets ----------------------------------------------------------------

def _scenario(name, boxes, n=16, gain=(0.001, 0.01)):
    return ScenarioSpec(tuple(PathDistribution(gain, a, d) for a, d in boxes), ArrayConfig(n, n), name)


PRESETS = {
    # Extra paths 6-8 of the path-count ablation.
    "paths-6-to-8": _scenario("paths-6-to-8", [((0.4, 0.8), (0.1, 0.3)),
                                               ((0.6, 1.0), (-0.3, -0.1)),
                                               ((-0.3, 0.9), (0.6, 1.0))]),
    "single-path": _scenario("single-path", [((0.4, 0.8), (-0.8, -0.4))]),
    "three-box": _scenario("three-box", [((-1.0, -0.6), (0.5, 0.9)),
                                         ((0.0, 0.4), (-0.9, -0.5)),
                                         ((0.7, 1.1), (0.0, 0.4))]),
    # Two disjoint stand-ins for a pair of base stations sharing one street layout.
    "bs10-analog": _scenario("bs10-analog", [((0.2, 0.5), (0.3, 0.6)),
                                             ((0.6, 0.9), (-0.2, 0.1)),
                                             ((0.9, 1.2), (0.7, 1.0)),
                                             ((0.3, 0.6), (-0.8, -0.5))]),
    "bs11-analog": _scenario("bs11-analog", [((-0.5, -0.2), (-0.6, -0.3)),
                                             ((-0.9, -0.6), (0.1, 0.4)),
                                             ((-1.2, -0.9), (-1.0, -0.7)),
                                             ((-0.7, -0.4), (0.6, 0.9))]),
}


def preset(name: str) -> ScenarioSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# --- CHNL files -------------------------------------------------------------

CHNL_MAGIC = b"CHNL"
CHNL_VERSION = 1
_HEADER = struct.Struct("<4sHBIHHHd")
_FLAG_TRUTH = 1
_FLAG_SCENARIO = 2


def encode_dataset(dataset: ChannelDataset) -> bytes:
    n, n_r, n_t = dataset.channels.shape
    p = 0 if dataset.truth is None else dataset.truth.shape[1]
    flags = (_FLAG_TRUTH if dataset.truth is not None else 0) | \
            (_FLAG_SCENARIO if dataset.scenario is not None else 0)
    parts = [_HEADER.pack(CHNL_MAGIC, CHNL_VERSION, flags, n, n_r, n_t, p, dataset.normalization_scale)]
    planes = np.stack([dataset.channels.real, dataset.channels.imag], axis=1)
    parts.append(planes.astype("<f4").tobytes())
    if dataset.truth is not None:
        parts.append(dataset.truth.astype("<f8").tobytes())
    if dataset.scenario is not None:
        text = format_scenario(dataset.scenario).encode()
        parts += [struct.pack("<I", len(text)), text]
    return b"".join(parts)


def decode_dataset(raw: bytes) -> ChannelDataset:
    if len(raw) < 4 or raw[:4] != CHNL_MAGIC:
        raise MagicError(f"not a CHNL file (magic {raw[:4]!r})")
    if len(raw) < _HEADER.size:
        raise TruncatedError("CHNL header truncated")
    _, version, flags, n, n_r, n_t, p, scale = _HEADER.unpack_from(raw)
    if version != CHNL_VERSION:
        raise VersionError(f"unsupported CHNL version {version}")
    if flags & ~(_FLAG_TRUTH | _FLAG_SCENARIO):
        raise ShapeError(f"unknown flag bits {flags:#04x}")
    if n_r == 0 or n_t == 0:
        raise ShapeError(f"invalid channel shape {n_r}x{n_t}")
    has_truth = bool(flags & _FLAG_TRUTH)
    if has_truth != (p > 0):
        raise ShapeError(f"path count {p} inconsistent with truth flag {has_truth}")
    offset = _HEADER.size
    n_chan = n * 2 * n_r * n_t
    end = offset + 4 * n_chan
    if len(raw) < end:
        raise TruncatedError(f"channel payload truncated ({len(raw) - offset} of {4 * n_chan} bytes)")
    planes = np.frombuffer(raw, "<f4", n_chan, offset).astype(float).reshape(n, 2, n_r, n_t)
    channels = planes[:, 0] + 1j * planes[:, 1]
    offset = end
    truth = None
    if has_truth:
        end = offset + 8 * n * p * 3
        if len(raw) < end:
            raise TruncatedError("truth payload truncated")
        truth = np.frombuffer(raw, "<f8", n * p * 3, offset).astype(float).reshape(n, p, 3)
        offset = end
    scenario = None
    if flags & _FLAG_SCENARIO:
        if len(raw) < offset + 4:
            raise TruncatedError("scenario length truncated")
        (length,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        if len(raw) < offset + length:
            raise TruncatedError("scenario text truncated")
        scenario = parse_scenario(raw[offset:offset + length].decode())
        offset += length
        if scenario.array.shape != (n_r, n_t):
            raise ShapeError("scenario array does not match channel shape")
    if offset != len(raw):
        raise TruncatedError(f"{len(raw) - offset} trailing bytes after payload")
    return ChannelDataset(channels, truth, scenario, scale)


def save_dataset(dataset: ChannelDataset, path) -> None:
    Path(path).write_bytes(encode_dataset(dataset))


def load_dataset(path) -> ChannelDataset:
    return decode_dataset(Path(path).read_bytes())
