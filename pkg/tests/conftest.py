import numpy as np
import pytest

from tsvc.data import Dataset


def random_dataset(rng, n, p, family="gaussian", n_binary=1, signal=True):
    """Small mixed-scale dataset with an optional varying coefficient on x1 by x2."""
    X = rng.normal(size=(n, p))
    scales = ["continuous"] * p
    for j in range(p - n_binary, p):
        X[:, j] = rng.integers(0, 2, n)
        scales[j] = "binary"
    eta = 0.2 + 0.4 * X[:, 0]
    if signal and p > 1:
        eta = eta + 0.8 * X[:, 0] * (X[:, 1] > 0)
    if family == "gaussian":
        y = eta + rng.normal(size=n)
    elif family == "binomial":
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    else:
        y = rng.poisson(np.exp(np.clip(eta, -5, 3))).astype(float)
    return Dataset.from_arrays(X, y, scales=scales)


@pytest.fixture
def rng():
    return np.random.default_rng(20240521)


@pytest.fixture(scope="session")
def swiss():
    pytest.importorskip("rdatasets")
    from tsvc.datasets import swiss_labor

    return swiss_labor()


@pytest.fixture(scope="session")
def ahs():
    pytest.importorskip("rdatasets")
    from tsvc.datasets import doctor_visits

    return doctor_visits()


def random_structure(rng, data, n_splits):
    """Random tree configuration: each split picks a predictor, one of its leaves and a modifier."""
    from tsvc.data import ModelStructure

    s = ModelStructure.linear_model(data.p)
    for _ in range(n_splits):
        j = int(rng.integers(data.p))
        tree = s.trees.get(j)
        leaf = 0 if tree is None else int(rng.choice(tree.leaf_ids()))
        m = int(rng.choice([k for k in range(data.p) if k != j]))
        c = float(np.quantile(data.column(m), rng.uniform(0.2, 0.8)))
        if data.scales[m] == "binary":
            c = 0.0
        try:
            s = s.split(j, leaf, m, c)
        except Exception:
            continue
    return s
