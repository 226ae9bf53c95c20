"""Generate channels, read paths off the gain matrices, and score the samples."""
import numpy as np

from chansynth import VaeConfig, build_dictionary, extract_paths, generate, generate_dataset, preset, train
from chansynth.metrics import mmd, wasserstein2

spec = preset("three-box")
data = generate_dataset(spec, 4000, seed=1)
cfg = VaeConfig(latent_dim=16, encoder_widths=(256, 128), decoder_widths=(128, 256), resolution=32,
                alpha_s=1e-3, epochs=40)
d = build_dictionary(cfg.grid, data.array)
model = train(data, d, cfg)
print("final train NMSE", round(model.history[-1]["nmse"], 4))

channels, gains = generate(model, d, 1000, seed=5)

# strongest three peaks of each generated gain matrix, by box
hits = np.zeros(len(spec.paths))
for w in gains:
    for p in extract_paths(w, cfg.grid, rel_threshold=0.5)[:3]:
        hits += [box.contains(p.aoa, p.aod) for box in spec.paths]
print("peaks per sample inside each box:", np.round(hits / len(gains), 2))

# generated samples against fresh real ones, and against noise of the same size.
# After this short run w2 already prefers the model, while MMD still favours the
# norm-matched noise.  Prior samples decode to channels that are too small, and
# the median-bandwidth kernel weighs norms heavily.  A stronger KL weight
# (alpha_d=1e-2) and 300 epochs reverse that.
real = generate_dataset(spec, 1000, seed=2).channels
noise = np.random.default_rng(0).standard_normal(real.shape + (2,)).view(complex)[..., 0]
noise *= np.linalg.norm(real, axis=(1, 2)).mean() / np.linalg.norm(noise, axis=(1, 2)).mean()
for name, x in (("generated", channels), ("gaussian", noise)):
    print(f"{name:9s} w2 {wasserstein2(x, real):.4g}   mmd {mmd(x, real):.4g}")
