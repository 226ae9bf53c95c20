import numpy as np
import pytest

from chansynth.compression import Compressor, CompressorConfig, NmseMatrix, cross_evaluate, train_compressor
from chansynth.datasets import generate_dataset, preset, PathDistribution, ScenarioSpec
from chansynth.pbgc import ArrayConfig, synthesize_channel


def small(name, count, seed, n=4):
    spec = preset(name)
    return generate_dataset(ScenarioSpec(spec.paths, ArrayConfig(n, n), name), count, seed)


def test_constant_dataset_is_memorised():
    h = synthesize_channel([(0.5, 0.3, -0.4), (0.2, -1.0, 0.8)], ArrayConfig(4, 4))
    data = np.repeat(h[None], 64, axis=0)
    model = train_compressor(data, CompressorConfig(bottleneck_dim=4, widths=(16,), epochs=100,
                                                     batch_size=16, learning_rate=3e-3))
    assert model.nmse(data) < 1e-3


def test_near_full_bottleneck_fits():
    spec = ScenarioSpec([PathDistribution((0.5, 1.0), (-1.0, 1.0), (-1.0, 1.0))], ArrayConfig(2, 2))
    data = generate_dataset(spec, 256, seed=0)
    cfg = CompressorConfig(bottleneck_dim=7, widths=(64,), epochs=1000, batch_size=256, learning_rate=1e-2)
    assert train_compressor(data, cfg).nmse(data) < 1e-3


def test_bottleneck_must_compress():
    data = small("single-path", 8, 0, n=2)
    with pytest.raises(ValueError):
        train_compressor(data, CompressorConfig(bottleneck_dim=8, epochs=1))
    with pytest.raises(ValueError):
        CompressorConfig(batch_size=1)


def test_seeded_runs_repeat_and_serialise():
    data = small("three-box", 64, 1)
    cfg = CompressorConfig(bottleneck_dim=6, widths=(12,), epochs=5, batch_size=16)
    a, b = train_compressor(data, cfg), train_compressor(data, cfg)
    assert a.history == b.history and a.nmse(data) == b.nmse(data)
    back = Compressor.from_bytes(a.to_bytes())
    assert back.to_bytes() == a.to_bytes()
    np.testing.assert_array_equal(back.reconstruct(data.channels), a.reconstruct(data.channels))


def test_cross_evaluate_matched_pairs_win():
    cfg = CompressorConfig(bottleneck_dim=4, widths=(24,), epochs=60, batch_size=32, learning_rate=3e-3)
    train = {"A": small("bs10-analog", 400, 0), "B": small("bs11-analog", 400, 0)}
    test = {"A": small("bs10-analog", 200, 9), "B": small("bs11-analog", 200, 9)}
    m = cross_evaluate(train, test, cfg)
    assert m["A", "A"] < m["A", "B"] and m["B", "B"] < m["B", "A"]
    again = NmseMatrix.from_csv(m.to_csv())
    assert again.rows == ["A", "B"] and again.cols == ["A", "B"]
    np.testing.assert_array_equal(again.values, m.values)


def test_cross_evaluate_parallel_matches_serial():
    cfg = CompressorConfig(bottleneck_dim=4, widths=(8,), epochs=2, batch_size=16)
    sets = {"A": small("bs10-analog", 40, 0), "B": small("bs11-analog", 40, 0)}
    np.testing.assert_array_equal(cross_evaluate(sets, sets, cfg, jobs=2).values,
                                  cross_evaluate(sets, sets, cfg).values)


def test_cross_evaluate_shape_mismatch():
    with pytest.raises(ValueError):
        cross_evaluate({"A": small("single-path", 8, 0)}, {"B": small("single-path", 8, 0, n=2)},
                       CompressorConfig(epochs=1))
