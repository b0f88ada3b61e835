import numpy as np
import pytest

from freqdet.data import SyntheticSpec, gen_synthetic


def dft_matrix(n: int) -> np.ndarray:
    j, k = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return np.exp(-2j * np.pi * j * k / n)


def naive_dft2(x: np.ndarray) -> np.ndarray:
    """Brute-force O(N^2)-per-output 2-D DFT; the independent FFT oracle."""
    H, W = x.shape[-2:]
    fh, fw = dft_matrix(H), dft_matrix(W)
    return np.einsum("uh,...hw,vw->...uv", fh, x, fw)


def ap_oracle(scores, labels) -> float:
    """Precision-at-each-positive, ranks by (score desc, original index asc)."""
    n = len(scores)
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    hits = 0
    precisions = []
    for rank, idx in enumerate(order, start=1):
        if labels[idx] == 1:
            hits += 1
            precisions.append(hits / rank)
    return sum(precisions) / len(precisions)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """24 images/class at size 16, strength 1.0; enough for format-level tests."""
    out = tmp_path_factory.mktemp("tiny_corpus")
    spec = SyntheticSpec(n_per_class=24, size=16, seed=7, artifact_strength=1.0)
    return gen_synthetic(spec, out)
