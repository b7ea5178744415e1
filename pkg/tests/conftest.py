import json

import numpy as np
import pytest

from portlab import FIXTURE_REFERENCE, fixture_path
from portlab.data import ReturnPanel, compute_returns, load_prices


@pytest.fixture(scope="session")
def fixture_prices():
    return load_prices(fixture_path())


@pytest.fixture(scope="session")
def fixture_returns(fixture_prices):
    return compute_returns(fixture_prices)


@pytest.fixture(scope="session")
def fixture_reference():
    return json.loads(fixture_path(FIXTURE_REFERENCE).read_text(encoding="utf-8"))


def make_panel(returns, start="2018-01-01", tickers=None):
    r = np.asarray(returns, dtype=np.float64)
    dates = np.datetime64(start) + np.arange(len(r))
    tickers = tickers or tuple(f"A{i}" for i in range(r.shape[1]))
    return ReturnPanel(dates, tickers, r)


@pytest.fixture(scope="session")
def small_models(fixture_returns):
    """Quickly trained models of every kind on the pre-2021 fixture returns."""
    from portlab.models.autoencoder import AEConfig, fit_autoencoder_model
    from portlab.models.drl import DRLConfig, train_drl
    from portlab.models.gnn import GNNConfig, fit_gnn_model
    from portlab.models.transformer import TransformerConfig, train_transformer

    train = fixture_returns.before("2021-01-01")
    ae = fit_autoencoder_model(train, AEConfig(epochs=30, seed=1))
    drl_cfg = DRLConfig(window=10, episode_length=30, iterations=2, episodes_per_iter=2,
                        hidden=8, epochs=1, seed=2)
    return {
        "ae": ae,
        "gnn": fit_gnn_model(train, GNNConfig(epochs=20, seed=3)),
        "tf": train_transformer(train, TransformerConfig(window=20, d_model=8, heads=2, layers=1,
                                                         ff=8, epochs=1, seed=4)),
        "drl": train_drl(train, drl_cfg),
        "ae_drl": train_drl(train, drl_cfg, latent_source=ae),
    }
