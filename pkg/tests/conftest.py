import numpy as np
import pytest

from memespace.data import EmbeddingDataset, EmbeddingRecord


def make_random_dataset(rng, n=8, d_img=5, d_txt=3, balanced=True):
    """Small random dataset with unique ids and both classes present."""
    records = []
    for i in range(n):
        label = i % 2 if balanced else int(rng.integers(0, 2))
        records.append(EmbeddingRecord(
            id=1000 + i,
            label=label,
            f_img=rng.standard_normal(d_img).astype(np.float32),
            f_txt=rng.standard_normal(d_txt).astype(np.float32),
        ))
    return EmbeddingDataset.from_records(d_img, d_txt, records)


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of scalar f at 1-d point x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def max_rel_err(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
