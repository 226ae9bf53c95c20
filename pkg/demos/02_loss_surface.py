"""Single-path loss surfaces over (aoa, aod) for growing arrays.

Writes one CSV per array size to $CHANSYNTH_OUT (default: current directory)
and prints the summary numbers.  Plot with 06_plot_surfaces.py.
"""
import os
from pathlib import Path

from chansynth import ArrayConfig, PathParams
from chansynth.analysis import loss_surface, surface_csv, surface_summary

out = Path(os.environ.get("CHANSYNTH_OUT", "."))
truth = PathParams(1.0, 1.0, 1.0)

for n in (4, 16, 64):
    s = loss_surface(truth, ArrayConfig(n, n), grid_points=201, pin_truth=True)
    (out / f"surface-n{n}.csv").write_text(surface_csv(s))
    info = surface_summary(s)
    print(f"n={n:3d}  min {info['min_value']:.1e} at ({info['argmin_theta_a']:.3f}, {info['argmin_theta_d']:.3f})"
          f"  near max {info['flatness_fraction']:.5f}  at 2g^2 level {info['plateau_fraction']:.3f}"
          f"  gap {info['optimality_gap']}")

# The global minimum stays on the truth, but the basin around it shrinks and
# almost the whole surface settles at the orthogonal-channel level 2 g^2.
# A gradient step started away from the truth sees nearly nothing to follow.
