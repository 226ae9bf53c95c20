"""Loss surfaces of the single-path model over (aoa, aod)."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .pbgc import ArrayConfig, PathParams, array_response_rx, array_response_tx


@dataclass(frozen=True)
class SurfaceGrid:
    values: np.ndarray      # values[i, j]: aoa = axis[i], aod = axis[j]
    axis: np.ndarray
    reference: PathParams
    config: ArrayConfig


def surface_axis(truth: PathParams, axis_range=(-np.pi / 2, np.pi / 2), grid_points=201,
                 pin_truth=False) -> np.ndarray:
    """Uniform axis; with ``pin_truth`` it is shifted so one node sits exactly on the true aoa.

    The true aod must then land on a node as well (e.g. equal angles).
    """
    lo, hi = axis_range
    axis = np.linspace(lo, hi, grid_points)
    if pin_truth:
        step = axis[1] - axis[0]
        k = int(np.rint((truth.aoa - lo) / step))
        axis = truth.aoa + (np.arange(grid_points) - k) * step
        if np.min(np.abs(axis - truth.aod)) > 1e-12:
            raise ValueError("cannot pin both aoa and aod on one uniform axis")
        axis[k] = truth.aoa
    return axis


def loss_surface(true_params: PathParams, config: ArrayConfig, axis_range=(-np.pi / 2, np.pi / 2),
                 grid_points: int = 201, pin_truth: bool = False) -> SurfaceGrid:
    """Squared Frobenius distance between single-path channels on a grid.

    The candidate keeps the true gain; only the two angles sweep the axis.
    Uses ``||A - B||^2 = 2 g^2 (1 - Re <a_r, a_r*> conj(<a_t, a_t*>))``, which
    holds for unit-norm steering vectors.
    """
    if grid_points < 8:
        raise ValueError("grid_points must be at least 8")
    truth = PathParams(*true_params)
    axis = surface_axis(truth, axis_range, grid_points, pin_truth)
    cr = array_response_rx(axis, config).conj() @ array_response_rx(truth.aoa, config)
    ct = array_response_tx(axis, config).conj() @ array_response_tx(truth.aod, config)
    inner = np.real(np.outer(cr, ct.conj()))
    values = np.maximum(2.0 * truth.gain ** 2 * (1.0 - inner), 0.0)
    return SurfaceGrid(values, axis, truth, config)


def flatness_fraction(surface: SurfaceGrid, epsilon_rel: float = 0.05) -> float:
    """Share of nodes whose loss is within ``epsilon_rel * max`` of the maximum."""
    v = surface.values
    top = v.max()
    return float(np.mean(v >= top - epsilon_rel * top))


def plateau_fraction(surface: SurfaceGrid, epsilon_rel: float = 0.05) -> float:
    """Share of nodes within ``epsilon_rel`` of the orthogonal-channel level ``2 g^2``.

    ``2 g^2`` is the loss against a candidate whose channel is orthogonal to
    the reference, i.e. the level the surface settles to away from the truth.
    """
    level = 2.0 * surface.reference.gain ** 2
    return float(np.mean(np.abs(surface.values - level) <= epsilon_rel * level))


def argmin(surface: SurfaceGrid) -> tuple[float, float, float]:
    i, j = np.unravel_index(np.argmin(surface.values), surface.values.shape)
    return float(surface.axis[i]), float(surface.axis[j]), float(surface.values[i, j])


def local_minima(surface: SurfaceGrid) -> np.ndarray:
    """Indices ``(k, 2)`` of nodes strictly below all their in-grid 8-neighbours."""
    v = surface.values
    ring = np.ones((3, 3), dtype=bool)
    ring[1, 1] = False
    low = ndimage.minimum_filter(v, footprint=ring, mode="constant", cval=np.inf)
    return np.argwhere(v < low)


def optimality_gap(surface: SurfaceGrid, basin_level: float = 0.1) -> float:
    """Lowest local minimum outside the truth basin minus the global minimum.

    The basin is the connected region (8-connectivity) of nodes below
    ``basin_level * max`` that contains the node nearest the truth.  Returns
    ``nan`` when no local minimum lies outside the basin.
    """
    v = surface.values
    labels, _ = ndimage.label(v < basin_level * v.max(), structure=np.ones((3, 3)))
    ti = int(np.argmin(np.abs(surface.axis - surface.reference.aoa)))
    tj = int(np.argmin(np.abs(surface.axis - surface.reference.aod)))
    basin = labels == labels[ti, tj] if labels[ti, tj] else np.zeros_like(v, dtype=bool)
    outside = [v[i, j] for i, j in local_minima(surface) if not basin[i, j]]
    if not outside:
        return float("nan")
    return float(min(outside) - v.min())


def surface_csv(surface: SurfaceGrid) -> str:
    """Header row of axis values, then one row of losses per aoa node."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([repr(float(a)) for a in surface.axis])
    for row in surface.values:
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def read_surface_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    rows = list(csv.reader(io.StringIO(text)))
    return np.array(rows[0], dtype=float), np.array(rows[1:], dtype=float)


def surface_summary(surface: SurfaceGrid, epsilon_rel: float = 0.05) -> dict:
    ta, td, vmin = argmin(surface)
    gap = optimality_gap(surface)
    return {
        "n": surface.config.n_r,
        "flatness_fraction": flatness_fraction(surface, epsilon_rel),
        "plateau_fraction": plateau_fraction(surface, epsilon_rel),
        "argmin_theta_a": ta,
        "argmin_theta_d": td,
        "min_value": vmin,
        "optimality_gap": None if np.isnan(gap) else gap,
    }
