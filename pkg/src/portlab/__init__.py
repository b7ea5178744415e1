"""Portfolio strategy lab: data pipeline, classical and learned allocators, backtester."""

__version__ = "0.1.0"

FIXTURE_PRICES = "fixtures/synthetic_prices.csv"
FIXTURE_REFERENCE = "fixtures/synthetic_reference.json"


def fixture_path(name: str = FIXTURE_PRICES):
    from importlib.resources import files
    return files(__name__).joinpath(name)
