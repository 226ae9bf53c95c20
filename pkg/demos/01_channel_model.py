"""Building channels from paths, and why a single path is rank one."""
import numpy as np

from chansynth import ArrayConfig, PathParams, flatten, nmse, synthesize_channel, unflatten

cfg = ArrayConfig(n_t=16, n_r=16)          # half-wavelength ULAs, u = pi

# one path: gain 0.005, arriving at 0.6 rad, leaving at -0.3 rad
h1 = synthesize_channel([PathParams(0.005, 0.6, -0.3)], cfg)
print("shape", h1.shape, "norm", np.linalg.norm(h1))        # norm equals |gain|
print("singular values", np.round(np.linalg.svd(h1, compute_uv=False)[:3], 6))

# three paths: rank three, and the channel is the sum of its parts
paths = [PathParams(0.005, 0.6, -0.3), PathParams(0.003, -0.9, 0.2), PathParams(0.008, 0.1, 0.7)]
h3 = synthesize_channel(paths, cfg)
print("rank", np.linalg.matrix_rank(h3, tol=1e-9))
print("sum of single paths matches:",
      np.allclose(h3, sum(synthesize_channel([p], cfg) for p in paths)))

# a small angle error already costs a lot of NMSE on a 16-element array
for err in (0.001, 0.01, 0.05, 0.2):
    off = [PathParams(p.gain, p.aoa + err, p.aod) for p in paths]
    print(f"aoa error {err:5.3f} rad -> NMSE {nmse(h3, synthesize_channel(off, cfg)):.4f}")

# networks see real vectors: real plane, then imaginary plane
x = flatten(h3)
print("flat length", x.size, "round trip exact:", np.array_equal(unflatten(x, cfg), h3))
