import numpy as np
import pytest
from scipy.stats import kstest

from chansynth.datasets import (ChannelDataset, PathDistribution, ScenarioSpec, ScenarioSyntaxError,
                                decode_dataset, encode_dataset, format_scenario, generate_dataset,
                                load_dataset, parse_scenario, preset, save_dataset, split)
from chansynth.errors import MagicError, ShapeError, TruncatedError, VersionError
from chansynth.pbgc import ArrayConfig, PathParams, synthesize_channel


def test_degenerate_ranges_give_identical_channels():
    spec = ScenarioSpec([PathDistribution((0.5, 0.5), (0.3, 0.3), (-0.2, -0.2))], ArrayConfig(4, 4))
    ds = generate_dataset(spec, 5, seed=1)
    ref = synthesize_channel([PathParams(0.5, 0.3, -0.2)], spec.array)
    for h in ds.channels:
        np.testing.assert_array_equal(h, ds.channels[0])
        np.testing.assert_allclose(h, ref, atol=1e-15)


def test_count_zero():
    ds = generate_dataset(preset("three-box"), 0)
    assert len(ds) == 0 and ds.channels.shape == (0, 16, 16)
    with pytest.raises(ValueError):
        generate_dataset(preset("three-box"), -1)


def test_paths_6_to_8_preset():
    spec = preset("paths-6-to-8")
    assert [(p.aoa_range, p.aod_range) for p in spec.paths] == [
        ((0.4, 0.8), (0.1, 0.3)), ((0.6, 1.0), (-0.3, -0.1)), ((-0.3, 0.9), (0.6, 1.0))]
    assert all(p.gain_range == (0.001, 0.01) for p in spec.paths)
    with pytest.raises(KeyError):
        preset("boston")


def test_reproducible_and_prefix_stable():
    spec = preset("bs10-analog")
    a, b = generate_dataset(spec, 50, seed=3), generate_dataset(spec, 50, seed=3)
    assert encode_dataset(a) == encode_dataset(b)
    np.testing.assert_array_equal(generate_dataset(spec, 20, seed=3).truth, a.truth[:20])
    assert not np.array_equal(generate_dataset(spec, 50, seed=4).truth, a.truth)


def test_truth_resynthesizes_channels():
    ds = generate_dataset(preset("three-box"), 200, seed=2)
    for i in range(len(ds)):
        h = synthesize_channel(ds.paths(i), ds.array)
        assert np.linalg.norm(h - ds.channels[i]) / np.linalg.norm(h) < 1e-12


def test_marginals_match_uniform_ranges():
    spec = preset("three-box")
    ds = generate_dataset(spec, 10000, seed=0)
    for p, dist in enumerate(spec.paths):
        for k, (lo, hi) in enumerate((dist.gain_range, dist.aoa_range, dist.aod_range)):
            stat = kstest(ds.truth[:, p, k], "uniform", args=(lo, hi - lo)).statistic
            assert stat < 0.02


def test_split_examples():
    ds = generate_dataset(preset("single-path"), 10, seed=0)
    (whole,) = split(ds, [1.0], seed=1)
    assert sorted(map(tuple, whole.truth[:, 0])) == sorted(map(tuple, ds.truth[:, 0]))
    a, b = split(ds, [0.5, 0.5], seed=1)
    assert len(a) == len(b) == 5
    keys = {tuple(t[0]) for t in a.truth} | {tuple(t[0]) for t in b.truth}
    assert len(keys) == 10
    c, _ = split(ds, [0.5, 0.5], seed=1)
    np.testing.assert_array_equal(c.channels, a.channels)
    for i in range(5):
        np.testing.assert_allclose(synthesize_channel(a.paths(i), a.array), a.channels[i], atol=1e-15)
    for bad in ([0.5, 0.4], [1.2, -0.2], []):
        with pytest.raises(ValueError):
            split(ds, bad)


def test_path_distribution_validation():
    with pytest.raises(ValueError):
        PathDistribution((0.1, 0.0))
    with pytest.raises(ValueError):
        PathDistribution(aoa_range=(-4.0, 0.0))
    with pytest.raises(ValueError):
        ScenarioSpec([])


def test_scenario_text_roundtrip():
    for name in ("three-box", "paths-6-to-8", "bs11-analog"):
        spec = preset(name)
        assert parse_scenario(format_scenario(spec)) == spec


def test_scenario_errors_are_line_anchored():
    good = "n_t = 4\nn_r = 4\n[path]\ngain = 0.1 0.2\naoa = 0 1\naod = 0 1\n"
    assert parse_scenario(good).array == ArrayConfig(4, 4)
    cases = [
        (good.replace("aoa = 0 1", "aoa = 0"), 5),
        (good.replace("n_r = 4", "n_r = four"), 2),
        (good + "colour = red\n", 7),
        (good.replace("[path]", "[paths]"), 3),
        (good.replace("aod = 0 1", "aod = 1 0"), 3),
        (good.replace("gain", "gian"), 4),
    ]
    for text, line in cases:
        with pytest.raises(ScenarioSyntaxError) as err:
            parse_scenario(text)
        assert err.value.line == line
        assert f"line {line}" in str(err.value)


def test_chnl_roundtrip_is_bit_exact(tmp_path):
    ds = generate_dataset(preset("three-box"), 30, seed=5)
    path = tmp_path / "d.chnl"
    save_dataset(ds, path)
    back = load_dataset(path)
    np.testing.assert_array_equal(back.truth, ds.truth)
    np.testing.assert_array_equal(back.channels, ds.channels.astype(np.complex64))
    assert back.scenario == ds.scenario
    save_dataset(back, tmp_path / "again.chnl")
    assert (tmp_path / "again.chnl").read_bytes() == path.read_bytes()


def test_chnl_header_layout():
    ds = ChannelDataset(np.array([[[1 + 2j, 3 - 4j]]]), normalization_scale=2.5)
    raw = encode_dataset(ds)
    assert raw[:4] == b"CHNL" and raw[4:6] == b"\x01\x00" and raw[6] == 0
    assert len(raw) == 25 + 4 * 4
    np.testing.assert_array_equal(np.frombuffer(raw[25:], "<f4"), [1, 3, 2, -4])
    back = decode_dataset(raw)
    assert back.truth is None and back.scenario is None and back.normalization_scale == 2.5


def test_chnl_corruption_is_typed():
    raw = encode_dataset(generate_dataset(preset("single-path"), 3, seed=0))
    with pytest.raises(VersionError):
        decode_dataset(b"XHNL" + raw[4:])
    with pytest.raises(MagicError):
        decode_dataset(b"")
    with pytest.raises(VersionError):
        decode_dataset(raw[:4] + b"\x02\x00" + raw[6:])
    with pytest.raises(TruncatedError):
        decode_dataset(raw[:20])
    with pytest.raises(TruncatedError):
        decode_dataset(raw[:-1])
    with pytest.raises(TruncatedError):
        decode_dataset(raw + b"x")
    with pytest.raises(ShapeError):
        decode_dataset(raw[:6] + b"\x80" + raw[7:])
    with pytest.raises(ShapeError):
        decode_dataset(raw[:11] + b"\x00\x00" + raw[13:])
