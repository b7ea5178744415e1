import math

import numpy as np
import pytest

from portlab.errors import DataError, ShapeError
from portlab.models.autoencoder import (AEConfig, AutoencoderModel, AutoencoderParams,
                                        ae_covariance, batch_loss, decode, encode,
                                        fit_autoencoder_model, init_autoencoder,
                                        reconstruct, reconstruction_loss, train_autoencoder)
from portlab.numerics import grad_check, min_eigenvalue, rng_stream

from conftest import make_panel
from oracles import replay_dense

LINEAR = dict(hidden=0, activation="linear")


def _zeroed(p: AutoencoderParams) -> AutoencoderParams:
    p.weights = {k: np.zeros_like(v) for k, v in p.weights.items()}
    return p


def _identity(d):
    p = init_autoencoder(d, AEConfig(latent_dim=d, **LINEAR))
    p.weights = {"enc.0.W": np.eye(d), "enc.0.b": np.zeros(d),
                 "dec.0.W": np.eye(d), "dec.0.b": np.zeros(d)}
    return p


def _rank3(seed=0, t=500, d=7):
    rng = rng_stream(seed)
    return rng.standard_normal((t, 3)) @ rng.standard_normal((3, d))


# ---------------------------------------------------------------- encode / decode

def test_zero_params_zero_code_and_output():
    p = _zeroed(init_autoencoder(5, AEConfig()))
    x = rng_stream(0).normal(0, 1, 5)
    assert np.all(encode(x, p) == 0)
    assert np.all(decode(np.ones(3), p) == 0)


def test_identity_linear_roundtrip():
    p = _identity(4)
    x = rng_stream(1).normal(0, 1, (6, 4))
    assert np.array_equal(encode(x, p), x)
    assert np.array_equal(decode(x, p), x)


def test_encode_decode_replay_oracle():
    p = init_autoencoder(6, AEConfig(seed=3))
    w = p.weights
    x = rng_stream(2).normal(0, 1, (4, 6))
    enc = [(w["enc.0.W"], w["enc.0.b"]), (w["enc.1.W"], w["enc.1.b"])]
    dec = [(w["dec.0.W"], w["dec.0.b"]), (w["dec.1.W"], w["dec.1.b"])]
    z = replay_dense(x, enc, math.tanh)
    assert np.allclose(encode(x, p), z, rtol=0, atol=1e-13)
    assert np.allclose(decode(z, p), replay_dense(z, dec, math.tanh), rtol=0, atol=1e-13)


def test_shape_errors():
    p = init_autoencoder(5, AEConfig())
    with pytest.raises(ShapeError):
        encode(np.zeros(4), p)
    with pytest.raises(ShapeError):
        decode(np.zeros(4), p)
    with pytest.raises(ShapeError):
        init_autoencoder(2, AEConfig(latent_dim=3))


def test_reconstruction_loss_examples():
    assert reconstruction_loss([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert reconstruction_loss([1.0, 0.0], [0.0, 0.0]) == 1.0
    assert reconstruction_loss([1.0, 2.0], [2.0, 4.0]) == 5.0
    with pytest.raises(ShapeError):
        reconstruction_loss([1.0], [1.0, 2.0])


def test_batch_loss_is_mean_of_sample_losses():
    p = init_autoencoder(4, AEConfig(seed=1))
    x = rng_stream(5).normal(0, 1, (8, 4))
    from portlab.numerics.autograd import constants
    expected = np.mean([reconstruction_loss(row, reconstruct(row, p)) for row in x])
    assert float(batch_loss(constants(p.weights), x, p).data) == pytest.approx(expected, rel=1e-13)


# ---------------------------------------------------------------- training

def test_grad_check():
    p = init_autoencoder(5, AEConfig(hidden=6, latent_dim=2, seed=4))
    x = rng_stream(6).normal(0, 1, (10, 5))
    assert grad_check(lambda w: batch_loss(w, x, p), p.weights) < 1e-4


def test_rank3_linear_reaches_tiny_loss():
    _, history = train_autoencoder(_rank3(), AEConfig(epochs=2000, lr=1e-2, **LINEAR))
    assert history[-1] < 1e-4


def test_full_width_linear_loss_vanishes():
    x = rng_stream(7).normal(0, 1, (300, 5))
    _, history = train_autoencoder(x, AEConfig(latent_dim=5, epochs=2000, lr=1e-2, **LINEAR))
    assert history[-1] < 1e-3


def test_fixture_loss_halves(fixture_returns):
    model = fit_autoencoder_model(fixture_returns.before("2021-01-01"), AEConfig())
    assert model.history[-1] < 0.5 * model.history[0]
    assert len(model.history) == AEConfig().epochs + 1


def test_training_deterministic():
    x = _rank3(1, t=200)
    a, ha = train_autoencoder(x, AEConfig(epochs=20, seed=11))
    b, hb = train_autoencoder(x, AEConfig(epochs=20, seed=11))
    assert ha == hb
    assert all(np.array_equal(a.weights[k], b.weights[k]) for k in a.weights)


def test_divergence_raises_training_error():
    from portlab.errors import TrainingError
    x = np.full((20, 3), 1e200)
    with pytest.raises(TrainingError, match="epoch 0"):
        train_autoencoder(x, AEConfig(epochs=3, latent_dim=2))


# ---------------------------------------------------------------- covariance

def test_perfect_reconstruction_gives_empirical():
    x = rng_stream(8).normal(0, 0.01, (120, 4))
    est = ae_covariance(_identity(4), x, repair=False)
    assert np.allclose(est.sigma, np.cov(x, rowvar=False), rtol=1e-12, atol=0)
    assert est.source == "autoencoder"


def test_constant_decoder_gives_sample_variances():
    x = rng_stream(9).normal(0, 0.01, (120, 4))
    p = init_autoencoder(4, AEConfig(seed=2))
    p.weights["dec.1.W"] = np.zeros_like(p.weights["dec.1.W"])
    p.weights["dec.1.b"] = np.full(4, 0.3)
    est = ae_covariance(p, x, repair=False)
    assert np.allclose(est.sigma, np.diag(x.var(axis=0, ddof=1)), rtol=1e-12, atol=1e-24)


def test_symmetric_psd_before_repair():
    x = rng_stream(10).normal(0, 1, (80, 5))
    p = init_autoencoder(5, AEConfig(seed=3))
    s = ae_covariance(p, x, repair=False).sigma
    assert np.array_equal(s, s.T)
    assert min_eigenvalue(s) >= -1e-15


def test_too_few_rows():
    with pytest.raises(DataError):
        ae_covariance(init_autoencoder(3, AEConfig(latent_dim=2)), np.zeros((1, 3)))


def test_fixture_covariance_contract(fixture_returns):
    train = fixture_returns.before("2021-01-01")
    model = fit_autoencoder_model(train, AEConfig())
    sigma = model.covariance(train).sigma
    var = train.returns.var(axis=0, ddof=1)
    assert np.max(np.abs(sigma - sigma.T)) <= 1e-12
    assert min_eigenvalue(sigma) >= 1e-8 - 1e-15
    assert np.all(np.abs(np.diag(sigma) / var - 1) <= 0.10)


def test_latent_features_standardised(fixture_returns):
    train = fixture_returns.before("2021-01-01")
    model = fit_autoencoder_model(train, AEConfig(epochs=20))
    z = model.latent_features(train.returns)
    assert np.allclose(z.mean(axis=0), 0, atol=1e-10)
    assert np.allclose(z.std(axis=0, ddof=1), 1, atol=1e-10)


def test_save_load_roundtrip(tmp_path):
    panel = make_panel(_rank3(2, t=100) * 0.01)
    model = fit_autoencoder_model(panel, AEConfig(epochs=5))
    model.save(tmp_path / "ae.json")
    back = AutoencoderModel.load(tmp_path / "ae.json")
    assert back.tickers == panel.tickers
    assert np.array_equal(back.covariance(panel).sigma, model.covariance(panel).sigma)
    assert np.array_equal(back.latent_features(panel.returns[:3]), model.latent_features(panel.returns[:3]))
