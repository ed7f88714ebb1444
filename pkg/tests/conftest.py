import numpy as np
import pytest

from flowfit import CovariateSeries, CytogramSeries, ModelParams


def toy_params():
    """Fixed 2-cluster, p=2, d=1 parameter set used by frozen-value tests."""
    return ModelParams(
        alpha0=np.array([0.1, -0.3]),
        alpha=np.array([[0.4, -0.2], [0.0, 0.5]]),
        beta0=np.array([[-1.0], [1.5]]),
        beta=np.array([[[0.3], [-0.1]], [[-0.2], [0.0]]]),
        sigma=np.array([[[0.8]], [[1.3]]]),
    )


def toy_dataset():
    """T=2 companion data for toy_params, with fractional multiplicities."""
    X = CovariateSeries(np.array([[0.5, -1.0], [-0.2, 0.3]]), ("a", "b"))
    Y = CytogramSeries(
        (np.array([[-1.2], [0.4], [2.0]]), np.array([[0.0], [-0.5], [1.1]])),
        (np.array([1.0, 2.0, 0.5]), np.array([1.5, 1.0, 2.0])),
    )
    return X, Y


def random_dataset(rng, T=12, p=2, d=1, K=2, n=40, spread=2.5, sd=0.8,
                   slope=0.2, weights="ones"):
    """Small synthetic mixture dataset for property tests."""
    Xv = rng.standard_normal((T, p))
    X = CovariateSeries(Xv, tuple(f"x{j}" for j in range(p)))
    centers = np.linspace(-spread, spread, K)
    coords, wts = [], []
    for t in range(T):
        z = rng.integers(0, K, size=n)
        y = centers[z][:, None] + slope * Xv[t, 0] + sd * rng.standard_normal((n, d))
        coords.append(y)
        if weights == "ones":
            wts.append(np.ones(n))
        else:
            wts.append(rng.integers(1, 4, size=n).astype(float))
    return X, CytogramSeries(tuple(coords), tuple(wts))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
