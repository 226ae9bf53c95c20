"""Render the CSVs written by 02_loss_surface.py (needs matplotlib)."""
import os
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from chansynth.analysis import read_surface_csv

out = Path(os.environ.get("CHANSYNTH_OUT", "."))
files = sorted(out.glob("surface-n*.csv"), key=lambda p: int(p.stem.split("n")[-1]))
if not files:
    sys.exit("no surface CSVs found; run 02_loss_surface.py first")

fig, axes = plt.subplots(1, len(files), figsize=(4 * len(files), 3.6))
for ax, path in zip(list(axes) if len(files) > 1 else [axes], files):
    axis, values = read_surface_csv(path.read_text())
    im = ax.imshow(values, origin="lower", extent=[axis[0], axis[-1], axis[0], axis[-1]], cmap="viridis")
    ax.set_title(path.stem)
    ax.set_xlabel("aod")
    ax.set_ylabel("aoa")
    fig.colorbar(im, ax=ax, shrink=0.8)
fig.tight_layout()
fig.savefig(out / "surfaces.png", dpi=120)
print("wrote", out / "surfaces.png")
