import numpy as np
import pytest

from chansynth.datasets import PathDistribution, ScenarioSpec, generate_dataset
from chansynth.dictionary import build_dictionary
from chansynth.generative import (VaeConfig, VaeModel, _Pipeline, decode_direct, decode_relaxed, encode,
                                  generate, init_model, kl_divergence, reconstruct, train, vae_loss)
from chansynth.pbgc import ArrayConfig, flatten, synthesize_channel
from oracles import finite_difference, rel_error

TINY = ArrayConfig(2, 2)


def tiny_config(**kw):
    base = dict(latent_dim=3, encoder_widths=(5,), decoder_widths=(6,), resolution=4, n_paths=2)
    base.update(kw)
    return VaeConfig(**base)


def tiny_data(count=64, seed=0):
    spec = ScenarioSpec([PathDistribution((0.2, 0.6), (-0.6, -0.2), (0.5, 1.0))], TINY)
    return generate_dataset(spec, count, seed)


def test_kl_examples():
    assert kl_divergence(np.zeros(4), np.zeros(4)) == 0.0
    assert kl_divergence([1.0], [0.0]) == pytest.approx(0.5)
    assert kl_divergence([0.0], [np.log(2.0)]) == pytest.approx(0.5 * (1 - np.log(2)))
    assert kl_divergence(np.ones((3, 2)), np.zeros((3, 2))).shape == (3,)


def test_vae_loss_scalar_oracle():
    rng = np.random.default_rng(0)
    h = rng.normal(size=(3, 2, 2)) + 1j * rng.normal(size=(3, 2, 2))
    hh = rng.normal(size=(3, 2, 2)) + 1j * rng.normal(size=(3, 2, 2))
    mu, lv = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    w = rng.normal(size=(3, 4, 4))
    total, mse, kl, l1 = vae_loss(h, hh, mu, lv, w, alpha_d=0.1, alpha_s=0.01)
    m = k = s = 0.0
    for b in range(3):
        for i in range(2):
            for j in range(2):
                d = h[b, i, j] - hh[b, i, j]
                m += d.real ** 2 + d.imag ** 2
        for z in range(4):
            k += 0.5 * (mu[b, z] ** 2 + np.exp(lv[b, z]) - lv[b, z] - 1)
        s += sum(abs(v) for v in w[b].ravel())
    assert mse == pytest.approx(m / 3, rel=1e-13)
    assert kl == pytest.approx(k / 3, rel=1e-13)
    assert l1 == pytest.approx(s / 3, rel=1e-13)
    assert total == mse + 0.1 * kl + 0.01 * l1


def test_vae_loss_zero_and_shape_errors():
    h = np.ones((2, 2), complex)
    assert vae_loss(h, h, np.zeros(3), np.zeros(3)) == (0.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        vae_loss(h, np.ones((2, 3)), np.zeros(3), np.zeros(3))


@pytest.mark.parametrize("mode", ["relaxed", "direct"])
def test_encode_decode_shapes(mode):
    cfg = tiny_config(mode=mode)
    model = init_model(cfg, TINY)
    h = tiny_data(5).channels
    mu, lv = encode(model, h)
    assert mu.shape == lv.shape == (5, 3)
    assert encode(model, h[0])[0].shape == (3,)
    if mode == "relaxed":
        assert decode_relaxed(model, mu).shape == (5, 4, 4)
        assert decode_relaxed(model, mu[0]).shape == (4, 4)
        with pytest.raises(ValueError):
            decode_direct(model, mu)
    else:
        paths = decode_direct(model, mu[0])
        assert len(paths) == 2
        assert all(-np.pi < p.aoa < np.pi and -np.pi < p.aod < np.pi for p in paths)
        assert len(decode_direct(model, mu)) == 5
    with pytest.raises(ValueError):
        encode(model, np.ones((3, 4, 4)))
    with pytest.raises(ValueError):
        (decode_relaxed if mode == "relaxed" else decode_direct)(model, np.zeros(4))


def test_decode_direct_matches_reconstruct():
    cfg = tiny_config(mode="direct")
    model = init_model(cfg, TINY, scale=0.3)
    h = tiny_data(4).channels
    mu, _ = encode(model, h)
    rec = reconstruct(model, None, h)
    for b in range(4):
        np.testing.assert_allclose(rec[b], synthesize_channel(decode_direct(model, mu[b]), TINY), atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("mode", ["relaxed", "direct"])
def test_end_to_end_gradient(mode, seed):
    cfg = tiny_config(mode=mode, alpha_d=0.3, alpha_s=0.05, seed=seed)
    rng = np.random.default_rng(seed)
    model = init_model(cfg, TINY, rng=rng)
    d = build_dictionary(cfg.grid, TINY) if mode == "relaxed" else None
    pipe = _Pipeline(model, d)
    x = flatten(tiny_data(6, seed).channels) / 0.01
    noise = rng.standard_normal((6, 3))

    def loss():
        return pipe.loss_and_grads(x, noise)[0][0]

    loss()
    params = pipe.params()
    analytic = [g.copy() for g in pipe.grads().values()]
    numeric = finite_difference(loss, list(params.values()))
    for name, an, nu in zip(params, analytic, numeric):
        assert rel_error(an, nu, floor=1e-3) < 1e-4, name


def test_loss_decomposition_holds_in_history():
    cfg = tiny_config(epochs=3, batch_size=16, alpha_d=0.2, alpha_s=0.01)
    data = tiny_data(64)
    model = train(data, build_dictionary(cfg.grid, TINY), cfg)
    assert [r["epoch"] for r in model.history] == [0, 1, 2]
    for r in model.history:
        assert r["total"] == pytest.approx(r["mse"] + 0.2 * r["kl"] + 0.01 * r["l1"], rel=1e-12)


def test_training_is_deterministic_and_resumable(tmp_path):
    cfg = tiny_config(epochs=2, batch_size=16)
    data = tiny_data(40)
    d = build_dictionary(cfg.grid, TINY)
    a, b = train(data, d, cfg), train(data, d, cfg)
    assert a.to_bytes() == b.to_bytes()
    path = tmp_path / "m.ckpt"
    a.save(path)
    back = VaeModel.load(path)
    assert back.to_bytes() == a.to_bytes()
    more = train(data, d, cfg, init=back)
    assert len(more.history) == 4
    with pytest.raises(ValueError):
        train(data, d, tiny_config(latent_dim=4), init=back)


def test_overfit_small_batch():
    cfg = tiny_config(epochs=400, batch_size=8, latent_dim=4, encoder_widths=(16,), decoder_widths=(16,),
                      learning_rate=3e-3, alpha_d=1e-4, alpha_s=0.0, resolution=8)
    data = tiny_data(8)
    model = train(data, build_dictionary(cfg.grid, TINY), cfg)
    assert model.history[-1]["nmse"] < 0.05


def test_sparsity_increases_with_alpha_s():
    data = tiny_data(128, seed=3)
    counts = {}
    for a_s in (0.0, 1e-2):
        c = []
        for seed in range(5):
            cfg = tiny_config(epochs=30, batch_size=32, alpha_s=a_s, seed=seed, resolution=8,
                              decoder_widths=(16,))
            d = build_dictionary(cfg.grid, TINY)
            _, w = generate(train(data, d, cfg), d, 200, seed=1)
            c.append(np.mean(np.sum(np.abs(w) > 0.01 * np.abs(w).max(axis=(1, 2), keepdims=True), axis=(1, 2))))
        counts[a_s] = np.mean(c)
    assert counts[1e-2] < counts[0.0]


def test_generate_determinism_and_shapes():
    cfg = tiny_config()
    model = init_model(cfg, TINY, scale=0.01)
    d = build_dictionary(cfg.grid, TINY)
    a, wa = generate(model, d, 10, seed=3, chunk=4)
    b, wb = generate(model, d, 10, seed=3)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(wa, wb)
    assert a.shape == (10, 2, 2) and wa.shape == (10, 4, 4)
    assert generate(model, d, 0)[0].shape == (0, 2, 2)
    direct = init_model(tiny_config(mode="direct"), TINY)
    ch, w = generate(direct, None, 3)
    assert w is None and ch.shape == (3, 2, 2)


def test_pipeline_checks_dictionary():
    cfg = tiny_config()
    model = init_model(cfg, TINY)
    with pytest.raises(ValueError):
        _Pipeline(model, None)
    with pytest.raises(ValueError):
        _Pipeline(model, build_dictionary(tiny_config(resolution=8).grid, TINY))
    with pytest.raises(ValueError):
        _Pipeline(init_model(tiny_config(mode="direct"), TINY), build_dictionary(cfg.grid, TINY))


@pytest.mark.parametrize("kw", [dict(mode="x"), dict(latent_dim=0), dict(batch_size=1), dict(alpha_d=-1)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        VaeConfig(**kw)


def test_corrupt_model_metadata_is_typed():
    from chansynth.errors import FormatError
    from chansynth.neural import encode_checkpoint
    model = init_model(tiny_config(), TINY)
    meta = {"kind": "vae", "config": {"latent_dim": "x"}, "array": {}, "scale": 1.0, "history": []}
    with pytest.raises(FormatError):
        VaeModel.from_bytes(encode_checkpoint(model.networks(), meta))
    with pytest.raises(FormatError):
        VaeModel.from_bytes(encode_checkpoint(model.networks(), {"kind": "compressor"}))
