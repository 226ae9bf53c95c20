"""Compressors trained on one scenario do worse on the other one."""
from chansynth import generate_dataset, preset
from chansynth.compression import CompressorConfig, cross_evaluate

sets = {name[:4]: generate_dataset(preset(name), 1500, seed=3) for name in ("bs10-analog", "bs11-analog")}
tests = {name[:4]: generate_dataset(preset(name), 500, seed=4) for name in ("bs10-analog", "bs11-analog")}
matrix = cross_evaluate(sets, tests, CompressorConfig(bottleneck_dim=32, epochs=30))
print(matrix.to_csv())
